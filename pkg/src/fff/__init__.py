"""Free-form flows: normalizing-flow training with a free-form encoder and a learned inverse.

The package trains an encoder f and decoder g so that g approximately inverts
f, replacing the log-determinant gradient with a trace estimator built from
the decoder Jacobian. Submodules:

* ``linalg``, ``kernels``: log-determinants, solves, probes (Cython or numpy)
* ``nn``: MLPs with forward, JVP, VJP and tangent-augmented reverse passes
* ``loss``: the FFF objective and the exact maximum-likelihood reference
* ``train``: Adam, schedules, metrics, beta search
* ``likelihood``: sampling, exact log-likelihoods, importance reweighting
* ``datasets``: toy densities, Boltzmann targets with MCMC, conditional task
* ``verify``: numerical checks of the surrogate's theory
* ``cli``: the ``fff`` command
"""
__version__ = "0.1.0"
