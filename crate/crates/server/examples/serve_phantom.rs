//! Generate a small phantom ensemble in a temp dir and serve it.
//!
//!     cargo run -p poroviz-server --example serve_phantom -- 127.0.0.1:8080
//!     curl 'http://127.0.0.1:8080/api/projection?metric=wasserstein&mode=group'

use poroviz::synth::{generate_ensemble, standard_variants, PhantomLayout};
use poroviz::GridSpec;
use poroviz_server::ServerConfig;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let bind = std::env::args().nth(1).unwrap_or_else(|| "127.0.0.1:8080".into());
    let dir = tempfile::tempdir()?;
    let grid = GridSpec { dx: 0.05, dy: 0.05, x_min: 0.025, x_max: 2.825, y_min: 0.025, y_max: 1.225, ..GridSpec::canonical() };
    generate_ensemble(&standard_variants(4, 1, 21), &PhantomLayout::default(), &grid, dir.path())?;
    let config = ServerConfig {
        manifest: dir.path().to_path_buf(),
        bind,
        precompute: vec!["metric=euclidean&mode=group&runs=sim1,sim2,sim3,sim4".into()],
        ..ServerConfig::default()
    };
    poroviz_server::serve(config).await
}
