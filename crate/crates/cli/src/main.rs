use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

use lcgram::codec::{self, Framing, GrammarFile, Payload, RecordMode, RecordReader, SerializeOptions};
use lcgram::postprocess::{run_length_compress_post, simplify, PostGrammar};
use lcgram::{merge_grams, pbuild, FingerprintWidth, Grammar, PipelineConfig, DEFAULT_SEED};

#[derive(Parser)]
#[command(
    name = "lcgram",
    version,
    about = "Mergeable grammar compression for string collections"
)]
struct Cli {
    /// Print progress to standard error.
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compress a file of records into a grammar.
    Compress(CompressArgs),
    /// Reproduce the original input from a grammar file.
    Decompress(IoArgs),
    /// Merge two mergeable grammar files built with the same seed.
    Merge {
        first: PathBuf,
        second: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Print grammar statistics as tab-separated key/value lines.
    Stats { input: PathBuf },
    /// Check a grammar file, optionally against the file it came from.
    Verify {
        input: PathBuf,
        #[arg(long)]
        original: Option<PathBuf>,
    },
}

#[derive(Args)]
struct IoArgs {
    /// Input path, or `-` for standard input.
    input: PathBuf,
    /// Output path, or `-` for standard output (the default).
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Line,
    Raw,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Width {
    #[value(name = "61")]
    Bits61,
    #[value(name = "32")]
    Bits32,
}

#[derive(Args)]
struct CompressArgs {
    /// Input path, or `-` for standard input.
    input: PathBuf,
    /// Output path; defaults to the input path with `.lcg` appended.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Worker threads.
    #[arg(short = 'p', long, value_parser = clap::value_parser!(u32).range(1..))]
    threads: Option<u32>,
    /// Buffer space in bytes that triggers a merge into the shared grammar.
    #[arg(short = 't', long, default_value_t = 512 << 20, value_parser = clap::value_parser!(u64).range(1..))]
    mem_threshold: u64,
    /// Target chunk size in bytes.
    #[arg(long, default_value_t = 1 << 20, value_parser = clap::value_parser!(u64).range(1..))]
    chunk_size: u64,
    /// Hash seed: an unsigned integer (decimal or 0x-prefixed) or `random`.
    #[arg(short, long, value_parser = parse_seed)]
    seed: Option<u64>,
    /// How the input splits into records.
    #[arg(short, long, value_enum, default_value_t = Mode::Line)]
    mode: Mode,
    /// Record separator for raw mode: a byte value or a single character.
    #[arg(long, value_parser = parse_byte)]
    sep: Option<u8>,
    /// Fingerprint width in bits.
    #[arg(long, value_enum, default_value_t = Width::Bits61)]
    fingerprint_bits: Width,
    /// Skip run-length compression.
    #[arg(long)]
    no_rl: bool,
    /// Skip inlining of single-use rules.
    #[arg(long)]
    no_simp: bool,
    /// Store fingerprints in mergeable output.
    #[arg(long)]
    keep_fingerprints: bool,
}

fn parse_seed(s: &str) -> Result<u64, String> {
    if s == "random" {
        return Ok(rand::random());
    }
    parse_u64(s).ok_or_else(|| format!("expected an unsigned integer or `random`, got `{s}`"))
}

fn parse_u64(s: &str) -> Option<u64> {
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16).ok(),
        None => s.parse().ok(),
    }
}

fn parse_byte(s: &str) -> Result<u8, String> {
    if let Some(v) = parse_u64(s) {
        return u8::try_from(v).map_err(|_| format!("byte value {v} out of range"));
    }
    match s {
        "\\n" => Ok(b'\n'),
        "\\t" => Ok(b'\t'),
        "\\0" => Ok(0),
        _ if s.len() == 1 => Ok(s.as_bytes()[0]),
        _ => Err(format!("expected a byte value or a single character, got `{s}`")),
    }
}

fn open_input(path: &Path) -> Result<Box<dyn Read>> {
    if path == Path::new("-") {
        Ok(Box::new(io::stdin().lock()))
    } else {
        let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
        Ok(Box::new(f))
    }
}

fn create_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    match path {
        None => Ok(Box::new(io::stdout().lock())),
        Some(p) if p == Path::new("-") => Ok(Box::new(io::stdout().lock())),
        Some(p) => {
            let f = File::create(p).with_context(|| format!("cannot create {}", p.display()))?;
            Ok(Box::new(BufWriter::new(f)))
        }
    }
}

fn read_grammar(path: &Path) -> Result<GrammarFile> {
    let file =
        codec::deserialize(open_input(path)?).with_context(|| format!("reading {}", path.display()))?;
    Ok(file)
}

fn compress(args: CompressArgs, verbose: bool) -> Result<()> {
    let record_mode = match args.mode {
        Mode::Line => RecordMode::Line,
        Mode::Raw => RecordMode::Raw(args.sep.expect("checked in main")),
    };
    let cfg = PipelineConfig {
        threads: args
            .threads
            .map_or_else(|| PipelineConfig::default().threads, |p| p as usize),
        mem_threshold: usize::try_from(args.mem_threshold).unwrap_or(usize::MAX),
        chunk_size: usize::try_from(args.chunk_size).unwrap_or(usize::MAX),
        seed: args.seed.unwrap_or(DEFAULT_SEED),
        width: match args.fingerprint_bits {
            Width::Bits61 => FingerprintWidth::Bits61,
            Width::Bits32 => FingerprintWidth::Bits32,
        },
        verbose,
        schedule_jitter: None,
    };
    cfg.validate()?;
    let output = match &args.output {
        Some(p) => p.clone(),
        None if args.input == Path::new("-") => PathBuf::from("-"),
        None => {
            let mut name = args.input.clone().into_os_string();
            name.push(".lcg");
            PathBuf::from(name)
        }
    };

    let mut reader = RecordReader::new(
        BufReader::with_capacity(1 << 20, open_input(&args.input)?),
        record_mode,
    );
    let grammar = pbuild(&mut reader, &cfg)?;
    let framing = reader.framing(record_mode);

    let payload = if args.no_rl && args.no_simp {
        // Rank order depends on scheduling; the canonical form does not.
        Payload::Mergeable(grammar.canonicalize()?)
    } else {
        let mut post = PostGrammar::from_grammar(&grammar);
        drop(grammar);
        if !args.no_rl {
            post = run_length_compress_post(post);
        }
        if !args.no_simp {
            post = simplify(post);
        }
        Payload::Final(post)
    };
    let file = GrammarFile { framing, payload };
    let opts = SerializeOptions {
        keep_fingerprints: args.keep_fingerprints,
    };
    let mut out = create_output(Some(&output))?;
    let bytes = codec::serialize(&file, opts, &mut out)?;
    out.flush()?;
    if verbose {
        eprintln!("wrote {bytes} bytes to {}", output.display());
    }
    Ok(())
}

fn decompress(args: IoArgs) -> Result<()> {
    let file = read_grammar(&args.input)?;
    let mut out = create_output(args.output.as_deref())?;
    codec::decompress(&file, &mut out)?;
    out.flush()?;
    Ok(())
}

fn merge(first: &Path, second: &Path, output: &Path) -> Result<()> {
    let a = read_grammar(first)?;
    let b = read_grammar(second)?;
    let (ga, gb) = match (a.payload, b.payload) {
        (Payload::Mergeable(ga), Payload::Mergeable(gb)) => (ga, gb),
        _ => bail!("format error: only grammars compressed with --no-rl --no-simp can be merged"),
    };
    let framing = a.framing.concat(ga.string_count(), &b.framing)?;
    let merged = merge_grams(ga, gb)?;
    let file = GrammarFile {
        framing,
        payload: Payload::Mergeable(merged.canonicalize()?),
    };
    let mut out = create_output(Some(output))?;
    codec::serialize(&file, SerializeOptions::default(), &mut out)?;
    out.flush()?;
    Ok(())
}

fn stats(input: &Path) -> Result<()> {
    let size = std::fs::metadata(input)
        .with_context(|| format!("cannot stat {}", input.display()))?
        .len();
    let file = read_grammar(input)?;
    let mut out = io::stdout().lock();
    let framing: &Framing = &file.framing;
    match &file.payload {
        Payload::Mergeable(g) => write_mergeable_stats(&mut out, g)?,
        Payload::Final(p) => {
            writeln!(out, "format\tfinal")?;
            writeln!(out, "g\t{}", p.rule_count())?;
            writeln!(out, "run_rules\t{}", p.run_rule_count())?;
            writeln!(out, "G\t{}", p.size())?;
            writeln!(out, "k\t{}", p.record_count())?;
            writeln!(out, "sigma\t{}", p.alphabet().len())?;
            writeln!(out, "seed\t{:#x}", p.seed())?;
        }
    }
    writeln!(out, "empty_records\t{}", framing.empty_records.len())?;
    writeln!(out, "file_bytes\t{size}")?;
    Ok(())
}

fn write_mergeable_stats(out: &mut impl Write, g: &Grammar) -> io::Result<()> {
    writeln!(out, "format\tmergeable")?;
    writeln!(out, "height\t{}", g.height())?;
    let mut max_g = 0;
    let mut max_size = 0;
    for (i, level) in g.levels().iter().enumerate() {
        writeln!(out, "g{}\t{}", i + 1, level.len())?;
        writeln!(out, "G{}\t{}", i + 1, level.rhs_total())?;
        max_g = max_g.max(level.len());
        max_size = max_size.max(level.rhs_total());
    }
    writeln!(out, "g\t{}", g.rule_count())?;
    writeln!(
        out,
        "G\t{}",
        g.levels().iter().map(|l| l.rhs_total()).sum::<usize>()
    )?;
    writeln!(out, "max_g_level\t{max_g}")?;
    writeln!(out, "max_G_level\t{max_size}")?;
    writeln!(out, "k\t{}", g.string_count())?;
    writeln!(out, "sigma\t{}", g.alphabet().len())?;
    writeln!(out, "seed\t{:#x}", g.seed())?;
    Ok(())
}

fn verify(input: &Path, original: Option<&Path>) -> Result<()> {
    // Deserializing already checks the checksum and grammar structure.
    let file = read_grammar(input)?;
    if let Some(orig) = original {
        let mut expected = Vec::new();
        open_input(orig)?.read_to_end(&mut expected)?;
        let mut produced = Vec::new();
        codec::decompress(&file, &mut produced)?;
        if produced != expected {
            let at = produced.iter().zip(&expected).position(|(a, b)| a != b);
            let at = at.unwrap_or(produced.len().min(expected.len()));
            bail!("round trip differs from {} at byte {at}", orig.display());
        }
    }
    println!("ok");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Command::Compress(args) = &cli.command {
        let msg = match (args.mode, args.sep) {
            (Mode::Raw, None) => Some("--mode raw requires --sep"),
            (Mode::Line, Some(_)) => Some("--sep only applies to --mode raw"),
            _ => None,
        };
        if let Some(msg) = msg {
            Cli::command().error(ErrorKind::ArgumentConflict, msg).exit();
        }
    }
    let result = match cli.command {
        Command::Compress(args) => compress(args, cli.verbose),
        Command::Decompress(args) => decompress(args),
        Command::Merge {
            first,
            second,
            output,
        } => merge(&first, &second, &output),
        Command::Stats { input } => stats(&input),
        Command::Verify { input, original } => verify(&input, original.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lcgram: {e:#}");
            ExitCode::FAILURE
        }
    }
}
