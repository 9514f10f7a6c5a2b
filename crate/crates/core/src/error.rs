use thiserror::Error;

/// Errors raised anywhere in the solver stack.
///
/// Every floor or limit violation surfaces here with the offending node;
/// nothing is clamped silently.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("field shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("singular tensor at node {node}: det = {det:e}")]
    SingularTensor { node: usize, det: f64 },

    #[error("density {value:e} at node {node} fell below the floor {floor}")]
    DensityFloor { node: usize, value: f64, floor: f64 },

    #[error("negative density {value:e} at node {node}")]
    NegativeDensity { node: usize, value: f64 },

    #[error("Neumann problem incompatible: source mean {mean:e}")]
    NeumannIncompatible { mean: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("normalization required: {0}")]
    Normalization(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("stage {stage} of time step failed: {source}")]
    StepAbort {
        stage: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("snapshot error: {0}")]
    Snapshot(String),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidGrid(_) | Error::InvalidParams(_) => 2,
            Error::Verification(_) => 4,
            Error::Io(_) | Error::Snapshot(_) => 2,
            _ => 3,
        }
    }

    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidGrid(_) => "InvalidGrid",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::SingularTensor { .. } => "SingularTensor",
            Error::DensityFloor { .. } => "DensityFloor",
            Error::NegativeDensity { .. } => "NegativeDensity",
            Error::NeumannIncompatible { .. } => "NeumannIncompatible",
            Error::NonConvergence { .. } => "NonConvergence",
            Error::Normalization(_) => "NormalizationError",
            Error::InvalidParams(_) => "InvalidParams",
            Error::NonFinite(_) => "NonFinite",
            Error::StepAbort { .. } => "StepAbort",
            Error::Config(_) => "ConfigError",
            Error::Snapshot(_) => "SnapshotError",
            Error::Verification(_) => "VerificationFailure",
            Error::Io(_) => "IoError",
        }
    }
}

impl Error {
    /// Grid node named by the error, looking through a step abort.
    pub fn node(&self) -> Option<usize> {
        match self {
            Error::SingularTensor { node, .. } | Error::DensityFloor { node, .. } | Error::NegativeDensity { node, .. } => {
                Some(*node)
            }
            Error::StepAbort { source, .. } => source.node(),
            _ => None,
        }
    }

    /// `[error]` table in TOML. `at` is the (step, time) of a failed run.
    pub fn report(&self, at: Option<(u64, f64)>) -> String {
        let mut t = toml::Table::new();
        t.insert("kind".into(), self.kind().into());
        t.insert("code".into(), i64::from(self.exit_code()).into());
        t.insert("message".into(), self.to_string().into());
        if let Error::StepAbort { stage, source } = self {
            t.insert("stage".into(), (*stage as i64).into());
            t.insert("cause".into(), source.kind().into());
        }
        if let Some(n) = self.node() {
            t.insert("node".into(), (n as i64).into());
        }
        if let Some((step, time)) = at {
            t.insert("step".into(), (step as i64).into());
            t.insert("time".into(), time.into());
        }
        let mut doc = toml::Table::new();
        doc.insert("error".into(), t.into());
        toml::to_string(&doc).unwrap_or_else(|_| format!("[error]\nkind = {:?}\n", self.kind()))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_is_parseable_and_locates_the_node() {
        let e = Error::StepAbort { stage: 2, source: Box::new(Error::DensityFloor { node: 41, value: -1e-3, floor: 0.0 }) };
        let text = e.report(Some((17, 0.25)));
        let doc: toml::Table = text.parse().unwrap();
        let t = doc["error"].as_table().unwrap();
        assert_eq!(t["kind"].as_str(), Some("StepAbort"));
        assert_eq!(t["cause"].as_str(), Some("DensityFloor"));
        assert_eq!(t["code"].as_integer(), Some(3));
        assert_eq!(t["node"].as_integer(), Some(41));
        assert_eq!(t["step"].as_integer(), Some(17));
        assert_eq!(t["time"].as_float(), Some(0.25));
        let cfg = Error::Config("bad \"quote\"\nline".into()).report(None);
        let doc: toml::Table = cfg.parse().unwrap();
        assert_eq!(doc["error"]["code"].as_integer(), Some(2));
        assert!(doc["error"].get("step").is_none());
    }
}
