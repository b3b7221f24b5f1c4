//! Operator-facing HTTP service. A run thread drives the adaptation loop and
//! mirrors its progress into [`ServiceState`]; the router exposes that state
//! and takes box and ranking feedback back to the loop.

mod api;
mod run;
mod state;

pub use api::build_router;
pub use run::{start_run, HumanOperator, RunOptions, ServiceObserver};
pub use state::{
    ApiEvent, EventKind, FeedbackMessage, PlotPoint, RankingAck, RefinedProposal, Rejection, RunSnapshot, ServiceState,
    EVENT_BUFFER,
};

use std::sync::Arc;

/// Serves the API on `listener` until the process ends.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<ServiceState>) -> std::io::Result<()> {
    axum::serve(listener, build_router(state)).await
}
