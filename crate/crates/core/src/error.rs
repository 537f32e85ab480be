use thiserror::Error;

use crate::diagnostics::DiagnosticsError;
use crate::em::EmError;
use crate::gibbs::GibbsError;
use crate::io::IoError;
use crate::logit::LogitError;
use crate::model::ModelError;
use crate::stochastic::StochasticError;
use crate::variational::VbError;

/// Any failure raised by the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Stochastic(#[from] StochasticError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Em(#[from] EmError),
    #[error(transparent)]
    Gibbs(#[from] GibbsError),
    #[error(transparent)]
    Variational(#[from] VbError),
    #[error(transparent)]
    Logit(#[from] LogitError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error(transparent)]
    Io(#[from] IoError),
}
