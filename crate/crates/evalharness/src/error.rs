use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no acceptance targets selected")]
    NoTargets,
    #[error(transparent)]
    Core(#[from] kgranger::Error),
    #[error(transparent)]
    Cli(#[from] kgranger_cli::CliError),
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type EvalResult<T> = Result<T, EvalError>;
