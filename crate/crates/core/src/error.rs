use crate::qp::QpError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Constraint family reported when a trajectory program has no feasible point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintClass {
    Boundary,
    Continuity,
    Corridor,
    Dynamics,
    Unknown,
}

impl std::fmt::Display for ConstraintClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            ConstraintClass::Boundary => "boundary",
            ConstraintClass::Continuity => "continuity",
            ConstraintClass::Corridor => "corridor",
            ConstraintClass::Dynamics => "dynamic limits",
            ConstraintClass::Unknown => "unclassified",
        };
        f.write_str(name)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error(transparent)]
    Qp(#[from] QpError),

    #[error("no path through known free space from {start:?} to {goal:?}")]
    NoPath { start: [usize; 3], goal: [usize; 3] },

    #[error("corridor box {index} collapsed below the minimum volume")]
    CorridorCollapsed { index: usize },

    #[error("trajectory program infeasible ({class} constraints)")]
    TrajectoryInfeasible { class: ConstraintClass },

    #[error("feature too close to the viewpoint axis (horizontal distance {distance:e} m)")]
    DegenerateFeature { distance: f64 },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
