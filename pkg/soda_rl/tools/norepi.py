# Norepinephrine-equivalent dose factors for the vasopressors pooled into the
# vasopressor action. Rates are multiplied by the factor and divided by body
# weight to obtain mcg/kg. Norepinephrine is the reference and pinned to 1.
# Defaults follow the common conversion used for ICU hypotension cohorts
# (epinephrine 1:1, dopamine 1:100, phenylephrine 0.45, vasopressin 2.5).
DEFAULT_CONVERSION_TABLE = {
    'norepinephrine': 1.0,
    'epinephrine': 1.0,
    'dopamine': 0.01,
    'phenylephrine': 0.45,
    'vasopressin': 2.5,
}
