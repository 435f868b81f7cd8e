//! Library side of the `prada` command: every subcommand is a plain function
//! so tests and benchmarks can drive it without spawning processes.

mod commands;
pub mod config;

pub use commands::{
    bench_csv_row, bind_server, build_server, cmd_bench, cmd_fit_blackbox, cmd_generate, cmd_serve,
    cmd_train_proxy, emit, error_line, proxy_loads, FitArch, GenerateOutcome, BENCH_CSV_HEADER,
};
pub use config::{Mode, RunConfig};
