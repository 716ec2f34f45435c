"""The four conformal uncertainty methods: cqr, csp, mcqr, cjp."""

from . import cjp, cqr, csp, mcqr

METHOD_NAMES = ("cqr", "csp", "mcqr", "cjp")

__all__ = ["METHOD_NAMES", "cjp", "cqr", "csp", "mcqr"]
