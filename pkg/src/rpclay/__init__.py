"""Johnson-Cook parameter identification for ballistic clay from drop-impact indentation.

Modules: constitutive (strength and pressure laws), solver (lumped impact
model), dataset (designs and fixtures), correlation (parameter screening),
mlp (surrogate networks), inverse (grid search and validation), cli.
"""

__version__ = "0.1.0"
