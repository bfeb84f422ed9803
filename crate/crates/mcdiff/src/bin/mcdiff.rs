//! Command-line front end for measurement-conditioned diffusion
//! reconstruction.

use mcdiff::cli::{parse_flags, run_command};

const USAGE: &str = "\
mcdiff — measurement-conditioned diffusion for under-sampled reconstruction

USAGE:
    mcdiff <COMMAND> [--config FILE] [--key value ...]

COMMANDS:
    gen-data       synthesize a phantom dataset     (--n, --size, --seed, --out)
    make-mask      build a sampling mask            (--width, --accel, --cf, --kind, --seed, --out)
    train          train the noise predictor        (--data, --mask, --out, --steps, --batch, --t, --lr, --resume)
    sample         posterior samples + uncertainty  (--checkpoint, --mask, --input, --out, --n-samples, --sampling-steps)
    eval           metrics vs ground truth          (--gt, --mask, --recon, --mean, --out)
    schedule-info  print schedule coefficients      (--t, --sigma-rule, --respace)

Flags mirror config keys; a --config file provides key=value defaults that
explicit flags override. Exit codes: 0 success, 1 user/config error,
2 I/O error, 3 internal invariant violation.
";

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.is_empty() || args[0] == "--help" || args[0] == "-h" || args[0] == "help" {
        print!("{USAGE}");
        std::process::exit(if args.is_empty() { 1 } else { 0 });
    }
    let command = args[0].clone();
    let cfg = match parse_flags(&args[1..]) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(e.exit_code());
        }
    };
    match run_command(&command, &cfg) {
        Ok(report) => {
            print!("{report}");
        }
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(e.exit_code());
        }
    }
}
