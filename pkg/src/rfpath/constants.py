"""Physical constants shared across the package."""

SPEED_OF_LIGHT_M_S = 299792458.0  # exact by SI definition
VACUUM_PERMITTIVITY_F_M = 8.8541878128e-12
