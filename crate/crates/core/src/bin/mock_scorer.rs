//! Deterministic mock scorer speaking the JSON-lines scorer protocol on stdio.

use std::io::{self, BufReader, Write};
use std::time::Duration;

use clap::Parser;

use mbr_probe::rpc::mock::{ChunkedWriter, MockFaults, MockScorer};
use mbr_probe::rpc::server::{serve, ServeOptions};

#[derive(Debug, Parser)]
#[command(name = "mbr-mock-scorer", about = "Mock scorer for the mbr-probe scorer protocol")]
struct Args {
    /// Protocol version to advertise in the hello reply.
    #[arg(long)]
    protocol: Option<u32>,
    /// Exit before reading anything.
    #[arg(long)]
    exit_immediately: bool,
    /// Exit without replying to the n-th matrix request.
    #[arg(long, value_name = "N")]
    die_on_request: Option<usize>,
    /// Reply to the n-th matrix request with an internal error.
    #[arg(long, value_name = "N")]
    error_on_request: Option<usize>,
    /// Return matrices with one extra column.
    #[arg(long)]
    bad_shape: bool,
    /// Split every reply into random-size writes drawn from this seed.
    #[arg(long, value_name = "SEED")]
    chunked: Option<u64>,
    /// Largest chunk size for --chunked.
    #[arg(long, default_value_t = 7)]
    max_chunk: usize,
}

fn main() -> io::Result<()> {
    let args = Args::parse();
    if args.exit_immediately {
        return Ok(());
    }
    let mut scorer = MockScorer::new(MockFaults {
        die_on_request: args.die_on_request,
        bad_shape: args.bad_shape,
        error_on_request: args.error_on_request,
    });
    let opts = ServeOptions {
        protocol: args.protocol,
    };
    let stdin = io::stdin();
    let mut input = BufReader::new(stdin.lock());
    let stdout = io::stdout();
    let mut output: Box<dyn Write> = match args.chunked {
        Some(seed) => Box::new(ChunkedWriter::new(
            stdout.lock(),
            seed,
            args.max_chunk,
            Duration::from_micros(200),
        )),
        None => Box::new(stdout.lock()),
    };
    serve(&mut scorer, &mut input, &mut output, &opts)
}
