use clap::Parser;

fn main() -> anyhow::Result<()> {
    capdet_cli::run(capdet_cli::Cli::parse())
}
