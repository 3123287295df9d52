use std::process::ExitCode;

use clap::Parser;
use dqdv_core::detect::Verdict;
use dqdv_gp::config::{Cli, Command};
use dqdv_gp::{analyze, bench, synth_cmd, Outcome};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Analyze(a) => analyze::run(a).map(|(report, outcome)| {
            for c in &report.conditions {
                let verdict = match c.verdict {
                    Some(Verdict::Plating) => "plating",
                    Some(Verdict::NoPlating) => "no plating",
                    None => "unassessable",
                };
                let rate = c
                    .degradation_rate
                    .map(|r| format!("{r:.3} %/cycle"))
                    .unwrap_or_else(|| "n/a".into());
                println!(
                    "{}: {verdict}, {} cycles, fade {rate}",
                    c.label,
                    c.cycles.len()
                );
            }
            if outcome == Outcome::Unassessable {
                eprintln!(
                    "warning: {} cycle(s) never reach {} V",
                    report.unassessable_cycles, a.analysis.threshold_v
                );
            }
            outcome
        }),
        Command::Synth(s) => synth_cmd::run(s).map(|(log, spec)| {
            println!("wrote {} and {}", log.display(), spec.display());
            Outcome::Complete
        }),
        Command::Bench(b) => bench::run(b).map(|s| {
            println!(
                "{} trials: GP better in {}, RMSE {:.4e} vs {:.4e}, coverage {:.4}",
                s.trials, s.gp_better, s.mean_gp_rmse, s.mean_sg_rmse, s.coverage
            );
            Outcome::Complete
        }),
    };
    match result {
        Ok(o) => ExitCode::from(o.exit_code()),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
