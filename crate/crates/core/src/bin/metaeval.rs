use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use metaeval::pipeline::{self, AnalyzeOptions};
use metaeval::EffectFamily;

#[derive(Parser)]
#[command(name = "metaeval", version, about = "Effect-size meta-analysis over multi-task evaluation results")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute per-task effects, pool them and write a forest plot and report.
    Analyze {
        /// JSON experiment manifest.
        #[arg(long)]
        config: PathBuf,
        /// Override the manifest's effect type.
        #[arg(long, value_name = "MD|SMD|CORR", value_parser = parse_family)]
        effect_type: Option<EffectFamily>,
        /// Override the manifest's significance level.
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        out_svg: PathBuf,
        #[arg(long)]
        out_md: PathBuf,
    },
}

fn parse_family(s: &str) -> Result<EffectFamily, String> {
    s.parse()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Analyze {
            config,
            effect_type,
            alpha,
            out_svg,
            out_md,
        } => {
            let opts = AnalyzeOptions {
                config,
                effect_type,
                alpha,
            };
            match pipeline::run(&opts, &out_svg, &out_md) {
                Ok(report) => {
                    eprintln!(
                        "pooled {} tasks: {} = {:.4}; wrote {} and {}",
                        report.tasks.len(),
                        report.effect_type,
                        report.pooled.summary.display_value,
                        out_svg.display(),
                        out_md.display()
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
    }
}
