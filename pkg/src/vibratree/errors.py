"""Exception types shared across the package.

Every error that a CLI command can surface maps onto one of these, so the
front end can translate them into stable exit codes.
"""

from __future__ import annotations


class VibratreeError(Exception):
    """Base class for all package-specific errors."""

    exit_code = 3


class InputError(VibratreeError):
    """Bad user input (files, arguments, mismatched data)."""

    exit_code = 2


# model ----------------------------------------------------------------

class CycleDetected(InputError):
    def __init__(self, branch_id: int):
        self.branch_id = branch_id
        super().__init__(f"branch {branch_id} participates in a parent cycle")


class MultipleRoots(InputError):
    def __init__(self, branch_ids):
        self.branch_ids = list(branch_ids)
        super().__init__(f"expected exactly one root branch, found {self.branch_ids}")


class NonPositiveParameter(InputError):
    def __init__(self, branch_id: int, name: str, value: float):
        self.branch_id = branch_id
        self.name = name
        self.value = value
        super().__init__(f"branch {branch_id}: {name}={value!r} must be > 0")


# simulator ------------------------------------------------------------

class SingularSystem(VibratreeError):
    pass


class DegenerateEnergy(VibratreeError):
    pass


class NonFiniteState(VibratreeError):
    def __init__(self, step_index: int):
        self.step_index = step_index
        super().__init__(f"state became non-finite at step {step_index}")


class NonPositiveMode(VibratreeError):
    def __init__(self, omega_sq):
        self.omega_sq = list(omega_sq)
        super().__init__(
            f"statically unstable tree: eigenvalues {self.omega_sq} are not positive"
        )


class InvalidForcing(InputError):
    pass


# spectral -------------------------------------------------------------

class EmptySeries(InputError):
    pass


class DivisionByZero(VibratreeError):
    def __init__(self, bins):
        self.bins = list(bins)
        super().__init__(f"root spectrum vanishes at bins {self.bins[:8]} with epsilon=0")


class DegenerateSpectrum(VibratreeError):
    pass


# appearance -----------------------------------------------------------

class NoContourPixels(InputError):
    pass


# inference ------------------------------------------------------------

class EmptyCluster(VibratreeError):
    pass


# metrics --------------------------------------------------------------

class MismatchedNodeSets(InputError):
    pass


# synth ----------------------------------------------------------------

class UnstableDraw(VibratreeError):
    pass


# cli ------------------------------------------------------------------

class ParseError(InputError):
    pass
