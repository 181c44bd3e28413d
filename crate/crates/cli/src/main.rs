use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::info;

use qsep::catalog::{bell_pair_mixture, ghz_w_mixture, isotropic, seven_term_symmetric, swapped_product_mixture};
use qsep::certify::{run_etkm_sdr, Certificate, CertifyOptions, Verdict};
use qsep::io::{check_certificate, parse_state_file, read_certificate, write_certificate};
use qsep::poly::Mode;
use qsep::tensor::{ensemble_to_tensor, HermitianTensor};

const EXIT_SEPARABLE: u8 = 0;
const EXIT_NOT_SEPARABLE: u8 = 1;
const EXIT_UNDETERMINED: u8 = 2;
const EXIT_INPUT: u8 = 3;

#[derive(Parser)]
#[command(name = "qsep", version, about = "Certify separability of multipartite mixed states")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decide whether a state is separable and emit a certificate.
    Certify(CertifyArgs),
    /// Re-check a certificate file against a state file.
    Verify {
        certificate: PathBuf,
        state: PathBuf,
        #[arg(long)]
        verbose: bool,
    },
    /// Run the built-in example states and print a summary table.
    Bench {
        /// Also run the slow partitioned-mode cases.
        #[arg(long)]
        full: bool,
        #[arg(long)]
        verbose: bool,
    },
}

#[derive(Args)]
struct CertifyArgs {
    state: PathBuf,
    /// Look for a symmetric decomposition (all factors of a term equal).
    #[arg(long)]
    symmetric: bool,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    rank_tol: Option<f64>,
    #[arg(long)]
    feas_tol: Option<f64>,
    #[arg(long)]
    residual_tol: Option<f64>,
    /// Degree of the random objective (even, at least 2m+2).
    #[arg(long)]
    degree: Option<usize>,
    /// Scale the input to unit trace instead of warning.
    #[arg(long)]
    rescale: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write each assembled relaxation to this directory.
    #[arg(long)]
    dump_sdp: Option<PathBuf>,
    #[arg(long)]
    verbose: bool,
}

fn init_logging(verbose: bool) {
    let level = if verbose { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Certify(args) => {
            init_logging(args.verbose);
            certify(args)
        }
        Command::Verify {
            certificate,
            state,
            verbose,
        } => {
            init_logging(verbose);
            verify(&certificate, &state)
        }
        Command::Bench { full, verbose } => {
            init_logging(verbose);
            bench(full)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}

fn certify(args: CertifyArgs) -> anyhow::Result<u8> {
    let (h, dims) = parse_state_file(&args.state).with_context(|| format!("reading {}", args.state.display()))?;
    info!("{} parties, dims {:?}", dims.parties(), dims.as_slice());
    let mode = if args.symmetric { Mode::Symmetric } else { Mode::Partitioned };
    let mut options = CertifyOptions::new(mode);
    options.seed = args.seed;
    options.k_max = args.k_max;
    options.d_override = args.degree;
    options.rescale_trace = args.rescale;
    options.dump_dir = args.dump_sdp;
    if let Some(x) = args.rank_tol {
        options.rank_tol = x;
    }
    if let Some(x) = args.feas_tol {
        options.feas_tol = x;
    }
    if let Some(x) = args.residual_tol {
        options.residual_tol = x;
    }
    if let Some(dir) = &options.dump_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }

    let cert = run_etkm_sdr(&h, &options)?;
    print_summary(&cert);
    if let Some(path) = &args.out {
        write_certificate(&cert, &h, path).with_context(|| format!("writing {}", path.display()))?;
        println!("certificate written to {}", path.display());
    }
    Ok(exit_code(&cert.verdict))
}

fn exit_code(verdict: &Verdict) -> u8 {
    match verdict {
        Verdict::Separable { .. } => EXIT_SEPARABLE,
        Verdict::NotSeparable { .. } => EXIT_NOT_SEPARABLE,
        Verdict::Undetermined { .. } => EXIT_UNDETERMINED,
    }
}

fn print_summary(cert: &Certificate) {
    let meta = &cert.metadata;
    for level in &meta.levels {
        println!(
            "k={} block={} moments={} status={:?} iters={} {:.2}s",
            level.k, level.moment_block, level.num_moments, level.status, level.iterations, level.seconds
        );
        for f in &level.flat_checks {
            let mut line = format!("  t={} rank {} -> {}", f.t, f.rank_prev, f.rank);
            if let Some(r) = f.residual {
                line += &format!(" residual {r:.2e}");
            }
            if let Some(note) = &f.note {
                line += &format!(" ({note})");
            }
            println!("{line}");
        }
    }
    match &cert.verdict {
        Verdict::Separable {
            decomposition,
            level_k,
            flat_t,
            residual,
        } => {
            println!(
                "separable: r={} at k={level_k}, t={flat_t}, residual {residual:.2e}",
                decomposition.atoms.len()
            );
            for (i, atom) in decomposition.atoms.iter().enumerate() {
                let vecs: Vec<String> = atom
                    .vectors
                    .iter()
                    .map(|v| {
                        let parts: Vec<String> = v.iter().map(|z| format!("{:+.4}{:+.4}i", z.re, z.im)).collect();
                        format!("({})", parts.join(", "))
                    })
                    .collect();
                println!("  {i}: weight {:.6} {}", atom.weight, vecs.join(" x "));
            }
        }
        Verdict::NotSeparable { level_k, margin, .. } => {
            let what = if meta.mode == Mode::Symmetric { "no symmetric decomposition" } else { "entangled" };
            println!("not separable ({what}): relaxation k={level_k} infeasible, margin {margin:.2e}");
        }
        Verdict::Undetermined {
            k_max_reached,
            diagnostics,
        } => {
            println!("undetermined after k={k_max_reached}");
            for d in diagnostics {
                println!("  {d}");
            }
        }
    }
    println!("total {:.2}s", meta.seconds);
}

fn verify(cert_path: &Path, state_path: &Path) -> anyhow::Result<u8> {
    let cert = read_certificate(cert_path).with_context(|| format!("reading {}", cert_path.display()))?;
    let (h, _) = parse_state_file(state_path).with_context(|| format!("reading {}", state_path.display()))?;
    match check_certificate(&cert, &h) {
        Ok(value) => {
            match &cert.verdict {
                Verdict::Separable { .. } => println!("ok: separable, residual {value:.3e}"),
                Verdict::NotSeparable { .. } => println!("ok: not separable, margin {value:.3e}"),
                Verdict::Undetermined { .. } => println!("ok: undetermined certificate asserts nothing"),
            }
            Ok(0)
        }
        Err(qsep::Error::Unsound(msg)) => {
            println!("rejected: {msg}");
            Ok(1)
        }
        Err(e) => Err(e.into()),
    }
}

struct Case {
    name: &'static str,
    mode: Mode,
    expect: &'static str,
    state: fn() -> HermitianTensor,
    slow: bool,
}

fn cases() -> Vec<Case> {
    vec![
        Case {
            name: "ghz-w mixture",
            mode: Mode::Symmetric,
            expect: "separable",
            state: || ensemble_to_tensor(&ghz_w_mixture()).unwrap(),
            slow: false,
        },
        Case {
            name: "bell pair mixture",
            mode: Mode::Symmetric,
            expect: "separable",
            state: || ensemble_to_tensor(&bell_pair_mixture()).unwrap(),
            slow: false,
        },
        Case {
            name: "bell pair mixture",
            mode: Mode::Partitioned,
            expect: "separable",
            state: || ensemble_to_tensor(&bell_pair_mixture()).unwrap(),
            slow: true,
        },
        Case {
            name: "swapped product",
            mode: Mode::Partitioned,
            expect: "separable",
            state: || ensemble_to_tensor(&swapped_product_mixture(1)).unwrap(),
            slow: true,
        },
        Case {
            name: "seven-term symmetric",
            mode: Mode::Symmetric,
            expect: "separable",
            state: || ensemble_to_tensor(&seven_term_symmetric()).unwrap(),
            slow: false,
        },
        Case {
            name: "isotropic F=1/2",
            mode: Mode::Symmetric,
            expect: "not_separable",
            state: || isotropic(2, 0.5).unwrap(),
            slow: false,
        },
        Case {
            name: "isotropic F=1/2",
            mode: Mode::Partitioned,
            expect: "separable",
            state: || isotropic(2, 0.5).unwrap(),
            slow: true,
        },
        Case {
            name: "isotropic F=1",
            mode: Mode::Symmetric,
            expect: "not_separable",
            state: || isotropic(2, 1.0).unwrap(),
            slow: false,
        },
    ]
}

fn bench(full: bool) -> anyhow::Result<u8> {
    println!(
        "{:<22} {:<12} {:<14} {:>3} {:>3} {:>10} {:>9}  ok",
        "state", "mode", "verdict", "k", "r", "residual", "seconds"
    );
    let mut failures = 0;
    for case in cases().into_iter().filter(|c| full || !c.slow) {
        let h = (case.state)();
        let start = Instant::now();
        let cert = run_etkm_sdr(&h, &CertifyOptions::new(case.mode))?;
        let seconds = start.elapsed().as_secs_f64();
        let (k, residual) = match &cert.verdict {
            Verdict::Separable { level_k, residual, .. } => (level_k.to_string(), format!("{residual:.1e}")),
            Verdict::NotSeparable { level_k, .. } => (level_k.to_string(), "-".into()),
            Verdict::Undetermined { k_max_reached, .. } => (k_max_reached.to_string(), "-".into()),
        };
        let r = cert.rank().map_or("-".into(), |r| r.to_string());
        let ok = cert.verdict.name() == case.expect;
        if !ok {
            failures += 1;
        }
        println!(
            "{:<22} {:<12} {:<14} {:>3} {:>3} {:>10} {:>9.2}  {}",
            case.name,
            format!("{:?}", case.mode).to_lowercase(),
            cert.verdict.name(),
            k,
            r,
            residual,
            seconds,
            if ok { "yes" } else { "NO" }
        );
    }
    Ok(u8::from(failures > 0))
}
