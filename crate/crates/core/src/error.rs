use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("model failed validation: {0}")]
    InvalidModel(String),

    #[error(
        "iteration did not converge after {iterations} sweeps (last sup change {last_change:.3e}, target {target:.3e})"
    )]
    Divergence {
        iterations: usize,
        last_change: f64,
        target: f64,
        history: Vec<f64>,
    },

    #[error("upper barrier reached the grid cap x_max = {x_max} in state(s) {states:?}; enlarge the grid")]
    GridCap { x_max: f64, states: Vec<usize> },

    #[error("barrier is outside the optimality band (rho1 = {rho1:.6}, rho2 = {rho2:.6})")]
    NotInXi { rho1: f64, rho2: f64 },

    #[error("mixing probability is indeterminate (rho1 = {rho1:.6}, rho2 = {rho2:.6})")]
    Indeterminate { rho1: f64, rho2: f64 },

    #[error("payout rule `{rule}` paid {payout} from capital {capital} at epoch {epoch}")]
    ContractViolation {
        rule: String,
        epoch: usize,
        payout: f64,
        capital: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
