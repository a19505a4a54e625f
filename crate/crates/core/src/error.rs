use thiserror::Error;

use crate::Vec3;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("point ({:.3}, {:.3}, {:.3}) um lies inside the exclusion zone of conductor `{conductor}`", point.x * 1e6, point.y * 1e6, point.z * 1e6)]
    Singular { conductor: String, point: Vec3 },

    #[error("search failed: {0}")]
    Search(String),

    #[error("converged to a saddle at ({:.3}, {:.3}, {:.3}) um (Hessian eigenvalues {eigenvalues:?})", position.x * 1e6, position.y * 1e6, position.z * 1e6)]
    Saddle {
        position: Vec3,
        eigenvalues: [f64; 3],
    },

    #[error("well tracking jumped {jump_um:.2} um between phases {from_rad:.4} and {to_rad:.4} rad")]
    Tracking {
        from_rad: f64,
        to_rad: f64,
        jump_um: f64,
    },

    #[error("thermal sampling failed: {0}")]
    Sampling(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("statistics error: {0}")]
    Statistics(String),

    #[error("at phase {phase_deg:.1} deg: {source}")]
    AtPhase {
        phase_deg: f64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn at_phase(self, phase_rad: f64) -> Self {
        Error::AtPhase {
            phase_deg: phase_rad.to_degrees(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
