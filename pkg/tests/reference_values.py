"""Frozen reference values for the shipped 2006-10-02 market fixtures.

Expected tranched losses (percent of tranche notional) implied by the shipped
reference schedules at the four quoted maturities, and the reference 10y
calibration errors, for the standard 0-3 / 3-6 / 6-9 / 9-12 / 12-22 / 22-100
tranche ladder on the 125-name pool with 40% recovery.
"""

TRANCHE_LADDER = ((0.00, 0.03), (0.03, 0.06), (0.06, 0.09),
                  (0.09, 0.12), (0.12, 0.22), (0.22, 1.00))

# rows: the four maturities in order; columns: the tranche ladder
REFERENCE_ETL_GPL = (
    (18.6, 0.2, 0.1, 0.1, 0.0, 0.0),
    (44.5, 4.2, 1.2, 0.6, 0.2, 0.1),
    (70.8, 14.6, 4.3, 2.1, 0.7, 0.2),
    (91.2, 47.2, 14.6, 6.4, 2.2, 0.4),
)
REFERENCE_ETL_GPCL = (
    (18.7, 0.2, 0.1, 0.0, 0.0, 0.0),
    (44.7, 4.2, 1.2, 0.6, 0.2, 0.1),
    (70.9, 14.6, 4.3, 2.1, 0.7, 0.2),
    (91.2, 47.5, 14.5, 6.4, 2.2, 0.4),
)

# weighted 10y calibration errors of the reference fits (index first,
# then the tranche ladder)
REFERENCE_EPS_10Y_GPL = (0.00, 0.76, -2.35, 1.21, -0.40, 0.02, 0.00)
REFERENCE_EPS_10Y_GPCL = (0.00, 0.62, -1.93, 1.04, -0.36, 0.02, 0.00)
