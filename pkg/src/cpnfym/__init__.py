"""Numerical verification toolkit for F-Yang-Mills connections over CP^n.

Submodules: :mod:`geometry` (Fubini-Study data and quadrature), :mod:`killing`
(su(n+1) Killing fields), :mod:`bundle` (bundle-valued forms and operators),
:mod:`fym` (functional, second variation, stability and gap analysis) and
:mod:`cli` (suite runner).
"""

__version__ = "0.1.0"
