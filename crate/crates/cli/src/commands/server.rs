//! `mock-server`: serve the wire protocol from a rule table until
//! interrupted.

use std::net::SocketAddr;
use std::path::PathBuf;

use clap::Args;
use radlabel::mock::{serve, RuleTable};

#[derive(Debug, Args)]
pub struct MockServerArgs {
    /// Rule table JSON; omitting it serves the built-in default table.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// Bind address; port 0 picks a free port (printed on startup).
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
}

pub fn run(args: &MockServerArgs) -> anyhow::Result<()> {
    let table = match &args.rules {
        Some(path) => RuleTable::load(path)?,
        None => RuleTable::default(),
    };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let handle = serve(table, args.addr).await?;
        // Parsed by callers that bind port 0; keep the format stable.
        println!("listening on {}", handle.endpoint());
        use std::io::Write;
        std::io::stdout().flush().ok();
        tokio::signal::ctrl_c().await?;
        handle.shutdown().await;
        Ok(())
    })
}
