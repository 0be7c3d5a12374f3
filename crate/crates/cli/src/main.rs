//! Command-line driver: compile recurrence programs to C, run them in the
//! interpreter, check them against the reference evaluator, or print
//! intermediate forms.
//!
//! Exit codes: 0 success, 1 compile-time rejection, 2 runtime mismatch or
//! error.

use clap::{Parser, Subcommand, ValueEnum};
use recurc_core::codegen::emit_c;
use recurc_core::pipeline::{check_against_oracle, compile_text, Compiled};
use recurc_core::runtime::{read_tensor_text, write_tensor_text, InterpretOptions, TensorData};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "recurc", about = "Compile recurrence equations into loop kernels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compile a program and emit C source.
    Compile {
        #[arg(long)]
        program: PathBuf,
        /// Output path for the generated C.
        #[arg(long, default_value = "out.c")]
        emit_c: PathBuf,
    },
    /// Interpret the compiled kernel on input tensors.
    Run {
        #[arg(long)]
        program: PathBuf,
        /// Input tensor file, repeatable: NAME=FILE (coordinate text).
        #[arg(long = "input", value_name = "NAME=FILE")]
        inputs: Vec<String>,
        #[arg(long, default_value = ".")]
        output_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Shuffle forall iteration order with the seed.
        #[arg(long)]
        permute_foralls: bool,
    },
    /// Run both the kernel and the reference evaluator and compare.
    Check {
        #[arg(long)]
        program: PathBuf,
        #[arg(long = "input", value_name = "NAME=FILE")]
        inputs: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        permute_foralls: bool,
        /// Maximum allowed relative difference.
        #[arg(long, default_value_t = 1e-10)]
        tolerance: f64,
    },
    /// Print an intermediate form of the compilation.
    Explain {
        #[arg(long)]
        program: PathBuf,
        #[arg(long, value_enum)]
        explain: ExplainTarget,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ExplainTarget {
    Fragments,
    Dag,
    Rin,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            code
        }
    }
}

const COMPILE_FAIL: ExitCode = ExitCode::from(1);
const RUNTIME_FAIL: ExitCode = ExitCode::from(2);

fn compile(program: &Path) -> Result<Compiled, (ExitCode, String)> {
    let text = std::fs::read_to_string(program)
        .map_err(|e| (COMPILE_FAIL, format!("{}: {e}", program.display())))?;
    let name = program
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("kernel")
        .replace(|c: char| !c.is_ascii_alphanumeric(), "_");
    let compiled = compile_text(&text, &name).map_err(|e| (COMPILE_FAIL, e.to_string()))?;
    for w in compiled.warnings() {
        eprintln!("warning: {w}");
    }
    Ok(compiled)
}

fn load_inputs(compiled: &Compiled, specs: &[String]) -> Result<BTreeMap<String, TensorData>, (ExitCode, String)> {
    let mut out = BTreeMap::new();
    for item in specs {
        let Some((name, file)) = item.split_once('=') else {
            return Err((COMPILE_FAIL, format!("--input needs NAME=FILE, got `{item}`")));
        };
        let storage = mask_storage(compiled, name)
            .unwrap_or_else(|| compiled.effective_spec.storage_of(name));
        let data = read_tensor_text(Path::new(file), &storage)
            .map_err(|e| (RUNTIME_FAIL, format!("{file}: {e}")))?;
        out.insert(name.to_string(), data);
    }
    Ok(out)
}

/// Inputs named `<tensor>_mask<k>` carry the mask's storage description.
fn mask_storage(compiled: &Compiled, name: &str) -> Option<recurc_core::frontend::StorageSpec> {
    let (tensor, idx) = name.rsplit_once("_mask")?;
    let idx: usize = idx.parse().ok()?;
    compiled.effective_spec.storage.get(tensor)?.masks.get(idx).cloned()
}

fn run(cli: Cli) -> Result<ExitCode, (ExitCode, String)> {
    match cli.command {
        Command::Compile { program, emit_c: out } => {
            let compiled = compile(&program)?;
            let src = emit_c(&compiled.kernel, &compiled.kernel.name.clone());
            std::fs::write(&out, src).map_err(|e| (COMPILE_FAIL, format!("{}: {e}", out.display())))?;
            println!("wrote {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { program, inputs, output_dir, seed, permute_foralls } => {
            let compiled = compile(&program)?;
            let inputs = load_inputs(&compiled, &inputs)?;
            let options = InterpretOptions {
                permute_foralls: permute_foralls.then_some(seed),
                permute_fors: false,
            };
            let (outputs, trace) = recurc_core::runtime::interpret(
                &compiled.kernel,
                &inputs,
                &compiled.effective_spec.initial_values,
                &options,
            )
            .map_err(|e| (RUNTIME_FAIL, e.to_string()))?;
            std::fs::create_dir_all(&output_dir)
                .map_err(|e| (RUNTIME_FAIL, format!("{}: {e}", output_dir.display())))?;
            for (name, data) in &outputs {
                let path = output_dir.join(format!("{name}.coo"));
                write_tensor_text(&path, data).map_err(|e| (RUNTIME_FAIL, e.to_string()))?;
                println!("wrote {}", path.display());
            }
            for (tensor, n) in &trace.loads {
                println!("loads {tensor}: {n}");
            }
            for (tensor, n) in &trace.stores {
                println!("stores {tensor}: {n}");
            }
            println!("searches: {}", trace.searches);
            Ok(ExitCode::SUCCESS)
        }
        Command::Check { program, inputs, seed, permute_foralls, tolerance } => {
            let compiled = compile(&program)?;
            let inputs = load_inputs(&compiled, &inputs)?;
            let options = InterpretOptions {
                permute_foralls: permute_foralls.then_some(seed),
                permute_fors: false,
            };
            match check_against_oracle(&compiled, &inputs, tolerance, &options) {
                Ok(report) => {
                    println!(
                        "check passed: max abs diff {:.3e}, max rel diff {:.3e}",
                        report.max_abs_diff, report.max_rel_diff
                    );
                    println!("searches: {}", report.trace.searches);
                    Ok(ExitCode::SUCCESS)
                }
                Err(e) => {
                    eprintln!("check failed: {e}");
                    Ok(RUNTIME_FAIL)
                }
            }
        }
        Command::Explain { program, explain } => {
            let compiled = compile(&program)?;
            match explain {
                ExplainTarget::Fragments => {
                    for f in &compiled.fragments {
                        println!("{f}");
                    }
                }
                ExplainTarget::Dag => print!("{}", compiled.dag.to_dot()),
                ExplainTarget::Rin => print!("{}", compiled.rin),
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
