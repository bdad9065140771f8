"""Managed-lane usage and toll-setting policies.

Each policy maps the three vehicle classes (HOV, LOCAV, LOHDV) to one of
``USE`` (may use the ML free), ``TOLL`` (may use the ML, pays the posted toll)
or ``BARRED`` (never admitted). HOVs are vehicles with more than one
occupant regardless of automation.
"""

from __future__ import annotations

import enum


class Access(enum.Enum):
    USE = "Use"
    TOLL = "Toll"
    BARRED = "/"


class VehicleClass(enum.Enum):
    HOV = "HOV"
    LOCAV = "LOCAV"
    LOHDV = "LOHDV"


def vehicle_class(is_cav: bool, occupancy: int) -> VehicleClass:
    if occupancy > 1:
        return VehicleClass.HOV
    return VehicleClass.LOCAV if is_cav else VehicleClass.LOHDV


U, T, X = Access.USE, Access.TOLL, Access.BARRED

# (HOV, LOCAV, LOHDV)
_TABLE = {
    "EU1": (U, X, X),
    "EU2": (X, U, X),
    "EU3": (U, U, X),
    "EU4": (U, T, X),
    "AU1": (U, U, U),
    "ST1": (U, U, T),
    "ST2": (U, T, T),
    "AT1": (T, T, T),
}


class MlPolicy(str, enum.Enum):
    EU1 = "EU1"
    EU2 = "EU2"
    EU3 = "EU3"
    EU4 = "EU4"
    AU1 = "AU1"
    ST1 = "ST1"
    ST2 = "ST2"
    AT1 = "AT1"

    @property
    def exclusive(self) -> bool:
        return self.value.startswith("EU")

    def access(self, is_cav: bool, occupancy: int) -> Access:
        """ML access for one vehicle.

        Admission follows the class condition of the eligibility rule, which
        for EU2 is the CAV flag itself: a high-occupancy CAV rides free there
        even though the HOV column reads "/".
        """
        hov, locav, lohdv = _TABLE[self.value]
        if self is MlPolicy.EU2:
            return Access.USE if is_cav else Access.BARRED
        cls = vehicle_class(is_cav, occupancy)
        return {VehicleClass.HOV: hov, VehicleClass.LOCAV: locav, VehicleClass.LOHDV: lohdv}[cls]

    @classmethod
    def parse(cls, name: str) -> "MlPolicy":
        try:
            return cls(name.strip().upper())
        except ValueError:
            raise ValueError(f"unknown policy {name!r}; expected one of {', '.join(p.value for p in cls)}") from None


ALL_POLICIES = tuple(MlPolicy)
