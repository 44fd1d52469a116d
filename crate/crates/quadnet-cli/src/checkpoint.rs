//! Versioned text checkpoints: every encoder parameter plus an echo of
//! the training configuration, in a fixed field order.
//!
//! ```text
//! quadnet-checkpoint v1
//! arch input <n> hidden <w1,w2|-> embed <k> coarse <k1> fine <k2>
//! cfg <field> <value>                  (fixed order, one per line)
//! layer <name> <out_dim> <in_dim>
//! w <in_dim weight values>             (one line per output row)
//! b <out_dim bias values>
//! ```
//!
//! Floats use shortest round-trip formatting, so reloading reproduces
//! the parameters bit for bit.

use quadnet::core::HyperParams;
use quadnet::encoder::{EncoderParams, LinearLayer, TrainConfig};
use quadnet::error::{Error, Result};
use quadnet::mining::MiningStrategy;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

const MAGIC: &str = "quadnet-checkpoint v1";

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn hidden_token(hidden: &[usize]) -> String {
    if hidden.is_empty() {
        "-".into()
    } else {
        hidden
            .iter()
            .map(|w| w.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

fn parse_hidden(tok: &str) -> Option<Vec<usize>> {
    if tok == "-" {
        return Some(Vec::new());
    }
    tok.split(',').map(|w| w.parse::<usize>().ok()).collect()
}

fn floats(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    params: &EncoderParams,
    cfg: &TrainConfig,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let mut line = |s: String| -> Result<()> { writeln!(w, "{s}").map_err(|e| io_err(path, e)) };

    line(MAGIC.into())?;
    line(format!(
        "arch input {} hidden {} embed {} coarse {} fine {}",
        params.input_dim(),
        hidden_token(&params.hidden_widths()),
        params.embed_dim(),
        params.coarse_classes(),
        params.fine_classes()
    ))?;
    line(format!("cfg learning_rate {}", cfg.learning_rate))?;
    line(format!("cfg momentum {}", cfg.momentum))?;
    line(format!("cfg epochs {}", cfg.epochs))?;
    line(format!("cfg batch_size {}", cfg.batch_size))?;
    line(format!("cfg embedding_dim {}", cfg.embedding_dim))?;
    line(format!("cfg hidden {}", hidden_token(&cfg.hidden)))?;
    line(format!(
        "cfg snapshot_refresh_every {}",
        cfg.snapshot_refresh_every
    ))?;
    line(format!(
        "cfg normalize_embeddings {}",
        cfg.normalize_embeddings
    ))?;
    line(format!("cfg seed {}", cfg.seed))?;
    line(format!(
        "cfg strategy {} {}",
        cfg.strategy.kind, cfg.strategy.rng_seed
    ))?;
    let h = &cfg.hyper;
    line(format!(
        "cfg hyper {}",
        floats(&[
            h.m1,
            h.m2,
            h.t1,
            h.t2,
            h.lambda_c1,
            h.lambda_c2,
            h.lambda_g1,
            h.lambda_g2,
            h.eta,
            h.alpha,
            h.m_trip
        ])
    ))?;

    let named: Vec<(String, &LinearLayer)> = layer_list(params);
    for (name, layer) in named {
        line(format!("layer {name} {} {}", layer.out_dim, layer.in_dim))?;
        for row in 0..layer.out_dim {
            let slice = &layer.weights[row * layer.in_dim..(row + 1) * layer.in_dim];
            line(format!("w {}", floats(slice)))?;
        }
        line(format!("b {}", floats(&layer.biases)))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn layer_list(params: &EncoderParams) -> Vec<(String, &LinearLayer)> {
    let mut v: Vec<(String, &LinearLayer)> = params
        .trunk
        .iter()
        .enumerate()
        .map(|(i, l)| (format!("trunk{i}"), l))
        .collect();
    v.push(("embed".into(), &params.embed_head));
    v.push(("coarse".into(), &params.coarse_head));
    v.push(("fine".into(), &params.fine_head));
    v
}

struct Cursor {
    lines: Vec<(usize, String)>,
    pos: usize,
}

impl Cursor {
    fn next(&mut self, path: &Path, what: &str) -> Result<(usize, String)> {
        let item = self.lines.get(self.pos).cloned().ok_or_else(|| {
            parse_err(
                path,
                self.lines.last().map_or(1, |l| l.0),
                format!("missing {what}"),
            )
        })?;
        self.pos += 1;
        Ok(item)
    }

    fn peek_starts_with(&self, prefix: &str) -> bool {
        self.lines
            .get(self.pos)
            .is_some_and(|(_, l)| l.starts_with(prefix))
    }

    fn at_end(&self) -> bool {
        self.pos >= self.lines.len()
    }
}

fn read_layer(cursor: &mut Cursor, path: &Path, expect: &str) -> Result<LinearLayer> {
    let (line, text) = cursor.next(path, "layer header")?;
    let toks: Vec<&str> = text.split_whitespace().collect();
    if toks.len() != 4 || toks[0] != "layer" || toks[1] != expect {
        return Err(parse_err(path, line, format!("expected layer {expect}")));
    }
    let parse_n = |tok: &str, what: &str, line: usize| -> Result<usize> {
        tok.parse()
            .map_err(|_| parse_err(path, line, format!("bad {what}: {tok:?}")))
    };
    let out_dim = parse_n(toks[2], "out dim", line)?;
    let in_dim = parse_n(toks[3], "in dim", line)?;
    let mut layer = LinearLayer::zeros(in_dim, out_dim);
    for row in 0..out_dim {
        let (line, text) = cursor.next(path, "weight row")?;
        let toks: Vec<&str> = text.split_whitespace().collect();
        if toks.len() != in_dim + 1 || toks[0] != "w" {
            return Err(parse_err(path, line, format!("expected {in_dim} weights")));
        }
        for (i, tok) in toks[1..].iter().enumerate() {
            layer.weights[row * in_dim + i] = tok
                .parse()
                .map_err(|_| parse_err(path, line, format!("bad float {tok:?}")))?;
        }
    }
    let (line, text) = cursor.next(path, "bias row")?;
    let toks: Vec<&str> = text.split_whitespace().collect();
    if toks.len() != out_dim + 1 || toks[0] != "b" {
        return Err(parse_err(path, line, format!("expected {out_dim} biases")));
    }
    for (i, tok) in toks[1..].iter().enumerate() {
        layer.biases[i] = tok
            .parse()
            .map_err(|_| parse_err(path, line, format!("bad float {tok:?}")))?;
    }
    Ok(layer)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(EncoderParams, TrainConfig)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut lines: Vec<(usize, String)> = Vec::new();
    for (i, l) in BufReader::new(file).lines().enumerate() {
        let l = l.map_err(|e| io_err(path, e))?;
        if !l.trim().is_empty() {
            lines.push((i + 1, l));
        }
    }
    let mut cursor = Cursor { lines, pos: 0 };

    let (line, magic) = cursor.next(path, "header")?;
    if magic != MAGIC {
        return Err(parse_err(path, line, format!("expected {MAGIC:?}")));
    }
    let (line, arch) = cursor.next(path, "arch line")?;
    let toks: Vec<&str> = arch.split_whitespace().collect();
    if toks.len() != 11 || toks[0] != "arch" {
        return Err(parse_err(path, line, "malformed arch line"));
    }
    let parse_n = |tok: &str, what: &str, line: usize| -> Result<usize> {
        tok.parse()
            .map_err(|_| parse_err(path, line, format!("bad {what}: {tok:?}")))
    };
    let input_dim = parse_n(toks[2], "input dim", line)?;
    let hidden = parse_hidden(toks[4])
        .ok_or_else(|| parse_err(path, line, format!("bad hidden list {:?}", toks[4])))?;
    let embed_dim = parse_n(toks[6], "embed dim", line)?;
    let coarse_classes = parse_n(toks[8], "coarse count", line)?;
    let fine_classes = parse_n(toks[10], "fine count", line)?;

    let mut cfg = TrainConfig::default();
    let mut hyper_seen = false;
    while !cursor.at_end() && !cursor.peek_starts_with("layer ") {
        let (line, text) = cursor.next(path, "cfg line")?;
        let toks: Vec<&str> = text.split_whitespace().collect();
        if toks.len() < 3 || toks[0] != "cfg" {
            return Err(parse_err(path, line, "expected `cfg <field> <value>`"));
        }
        let parse_f = |tok: &str| -> Result<f64> {
            tok.parse()
                .map_err(|_| parse_err(path, line, format!("bad float {tok:?}")))
        };
        match toks[1] {
            "learning_rate" => cfg.learning_rate = parse_f(toks[2])?,
            "momentum" => cfg.momentum = parse_f(toks[2])?,
            "epochs" => cfg.epochs = parse_n(toks[2], "epochs", line)?,
            "batch_size" => cfg.batch_size = parse_n(toks[2], "batch size", line)?,
            "embedding_dim" => cfg.embedding_dim = parse_n(toks[2], "embedding dim", line)?,
            "hidden" => {
                cfg.hidden = parse_hidden(toks[2])
                    .ok_or_else(|| parse_err(path, line, "bad hidden list"))?
            }
            "snapshot_refresh_every" => {
                cfg.snapshot_refresh_every = parse_n(toks[2], "refresh cadence", line)?
            }
            "normalize_embeddings" => {
                cfg.normalize_embeddings = toks[2]
                    .parse()
                    .map_err(|_| parse_err(path, line, "bad bool"))?
            }
            "seed" => cfg.seed = parse_n(toks[2], "seed", line)? as u64,
            "strategy" => {
                if toks.len() != 4 {
                    return Err(parse_err(path, line, "expected `cfg strategy <kind> <seed>`"));
                }
                cfg.strategy = MiningStrategy::new(
                    toks[2].parse()?,
                    parse_n(toks[3], "strategy seed", line)? as u64,
                );
            }
            "hyper" => {
                if toks.len() != 13 {
                    return Err(parse_err(path, line, "expected 11 hyperparameters"));
                }
                let v: Vec<f64> = toks[2..]
                    .iter()
                    .map(|t| parse_f(t))
                    .collect::<Result<_>>()?;
                cfg.hyper = HyperParams {
                    m1: v[0],
                    m2: v[1],
                    t1: v[2],
                    t2: v[3],
                    lambda_c1: v[4],
                    lambda_c2: v[5],
                    lambda_g1: v[6],
                    lambda_g2: v[7],
                    eta: v[8],
                    alpha: v[9],
                    m_trip: v[10],
                }
                .validated()?;
                hyper_seen = true;
            }
            other => return Err(parse_err(path, line, format!("unknown cfg field {other:?}"))),
        }
    }
    if !hyper_seen {
        return Err(parse_err(path, 1, "checkpoint lacks the hyper echo"));
    }

    let mut trunk = Vec::with_capacity(hidden.len());
    for i in 0..hidden.len() {
        trunk.push(read_layer(&mut cursor, path, &format!("trunk{i}"))?);
    }
    let embed_head = read_layer(&mut cursor, path, "embed")?;
    let coarse_head = read_layer(&mut cursor, path, "coarse")?;
    let fine_head = read_layer(&mut cursor, path, "fine")?;

    let params = EncoderParams {
        trunk,
        embed_head,
        coarse_head,
        fine_head,
    };
    if params.input_dim() != input_dim
        || params.embed_dim() != embed_dim
        || params.coarse_classes() != coarse_classes
        || params.fine_classes() != fine_classes
        || params.hidden_widths() != hidden
    {
        return Err(Error::Validation(
            "checkpoint layer shapes disagree with its arch line".into(),
        ));
    }
    if !params.is_finite() {
        return Err(Error::Validation("checkpoint contains non-finite values".into()));
    }
    Ok((params, cfg))
}
