"""Dual formulation of second-order stochastic target problems.

Submodules are imported on demand so that ``dualtarget.cli`` can cap
worker threads before numpy loads:

* :mod:`dualtarget.paths`       pathwise integrals, quadratic variation, concatenation
* :mod:`dualtarget.generators`  nonlinearities ``H`` and their conjugates ``F``
* :mod:`dualtarget.payoffs`     terminal functionals
* :mod:`dualtarget.lattice`     lattices, trees, controls, path sampling
* :mod:`dualtarget.bsde`        backward solvers under one control
* :mod:`dualtarget.dual`        dual value, oracle, increments of ``K``
* :mod:`dualtarget.pde`         finite-difference oracles
* :mod:`dualtarget.primal`      forward wealth simulation and superhedging
* :mod:`dualtarget.suite`       acceptance checks
"""

__version__ = "0.1.0"
