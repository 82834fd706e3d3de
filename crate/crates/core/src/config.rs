//! Model geometry and ablation switches.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::error::{Error, Result};

/// Component switches. `true` means the component is present; all `true` is
/// the full model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ablation {
    /// Differential self/cross attention in MDTA (off: standard multi-head attention).
    pub da: bool,
    /// Convolutional signal embedding (off: linear projection of 150-sample patches).
    pub se: bool,
    /// Cross-modal attention between global tokens.
    pub ca: bool,
    /// Cross-domain feature alignment losses.
    pub fa: bool,
    /// Standard MHSA for inter-epoch context (off: differential attention).
    pub id: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self { da: true, se: true, ca: true, fa: true, id: true }
    }
}

impl Ablation {
    pub const FULL: Ablation = Ablation { da: true, se: true, ca: true, fa: true, id: true };

    /// The six rows of the ablation table: one component removed per row,
    /// then the full model.
    pub fn table_rows() -> [(&'static str, Ablation); 6] {
        let f = Self::FULL;
        [
            ("-DA", Ablation { da: false, ..f }),
            ("-SE", Ablation { se: false, ..f }),
            ("-CA", Ablation { ca: false, ..f }),
            ("-FA", Ablation { fa: false, ..f }),
            ("-ID", Ablation { id: false, ..f }),
            ("full", f),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Token width per modality.
    pub d: usize,
    /// Series tokens per epoch.
    pub n_tok: usize,
    /// Epochs per input sequence.
    pub n_seq: usize,
    /// Samples per epoch and channel.
    pub samples: usize,
    pub layers: usize,
    pub mdta_heads: usize,
    pub seq_heads: usize,
    pub mlp_ratio: usize,
    pub classes: usize,
    /// Channel widths of the three embedding convolutions.
    pub conv_channels: [usize; 3],
    pub conv_kernel: usize,
    pub pools: [usize; 3],
    /// Channel widths entering each decoder block and the final output width.
    pub decoder_channels: [usize; 6],
    pub decoder_strides: [usize; 5],
    /// Positions of the reshaped decoder input.
    pub decoder_positions: usize,
    pub dropout: f64,
    pub ln_eps: f64,
    /// Scale-normalise each differential head by `1 - lambda_init`.
    pub headwise_norm: bool,
    pub ablation: Ablation,
}

impl ModelConfig {
    /// d=128, L=4, 4 MDTA heads, 8 inter-epoch heads, 20 tokens of 150 samples.
    pub fn standard() -> Self {
        Self::with_width(128, 4)
    }

    /// Same geometry with width `d` and `layers` MDTA layers. Embedding and
    /// decoder channel counts scale with `d`.
    pub fn with_width(d: usize, layers: usize) -> Self {
        let big = 2 * d;
        Self {
            d,
            n_tok: 20,
            n_seq: 20,
            samples: 3000,
            layers,
            mdta_heads: 4,
            seq_heads: 8,
            mlp_ratio: 4,
            classes: 5,
            conv_channels: [d / 4, d / 2, d],
            conv_kernel: 7,
            pools: [5, 5, 6],
            decoder_channels: [big / 4, big / 4, big / 8, big / 8, big / 16, 2],
            decoder_strides: [5, 5, 5, 3, 2],
            decoder_positions: 4,
            dropout: 0.1,
            ln_eps: 1e-5,
            headwise_norm: true,
            ablation: Ablation::FULL,
        }
    }

    /// Fused epoch feature width.
    pub fn big_d(&self) -> usize {
        2 * self.d
    }

    /// Samples covered by one series token.
    pub fn patch(&self) -> usize {
        self.pools.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d == 0 || self.layers == 0 || self.mdta_heads == 0 || self.seq_heads == 0 {
            return bad(format!("zero-sized dimension in {:?}", self));
        }
        if !self.d.is_multiple_of(2 * self.mdta_heads) {
            return bad(format!("d={} not divisible by 2*heads={}", self.d, 2 * self.mdta_heads));
        }
        if !self.big_d().is_multiple_of(2 * self.seq_heads) {
            return bad(format!("D={} not divisible by 2*seq_heads", self.big_d()));
        }
        if self.conv_channels[2] != self.d {
            return bad(format!("last conv width {} must equal d={}", self.conv_channels[2], self.d));
        }
        if self.conv_channels.contains(&0) || self.conv_kernel.is_multiple_of(2) {
            return bad(format!("conv channels {:?} / odd kernel {} invalid", self.conv_channels, self.conv_kernel));
        }
        if self.n_tok * self.patch() != self.samples {
            return bad(format!(
                "{} tokens x {} samples per token != {} samples",
                self.n_tok,
                self.patch(),
                self.samples
            ));
        }
        if self.decoder_channels[0] * self.decoder_positions != self.big_d() {
            return bad(format!(
                "decoder input {}x{} must reshape D={}",
                self.decoder_channels[0],
                self.decoder_positions,
                self.big_d()
            ));
        }
        if self.decoder_channels[5] != 2 || self.decoder_channels.contains(&0) {
            return bad(format!("decoder channels {:?} must end in 2", self.decoder_channels));
        }
        let up: usize = self.decoder_strides.iter().product();
        if up * self.decoder_positions != self.samples {
            return bad(format!("decoder upsamples to {}, need {}", up * self.decoder_positions, self.samples));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    /// `key = value` lines, the text form used inside checkpoints.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let list = |v: &[usize]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",");
        let _ = writeln!(s, "model.d = {}", self.d);
        let _ = writeln!(s, "model.n_tok = {}", self.n_tok);
        let _ = writeln!(s, "model.n_seq = {}", self.n_seq);
        let _ = writeln!(s, "model.samples = {}", self.samples);
        let _ = writeln!(s, "model.layers = {}", self.layers);
        let _ = writeln!(s, "model.mdta_heads = {}", self.mdta_heads);
        let _ = writeln!(s, "model.seq_heads = {}", self.seq_heads);
        let _ = writeln!(s, "model.mlp_ratio = {}", self.mlp_ratio);
        let _ = writeln!(s, "model.classes = {}", self.classes);
        let _ = writeln!(s, "model.conv_channels = {}", list(&self.conv_channels));
        let _ = writeln!(s, "model.conv_kernel = {}", self.conv_kernel);
        let _ = writeln!(s, "model.pools = {}", list(&self.pools));
        let _ = writeln!(s, "model.decoder_channels = {}", list(&self.decoder_channels));
        let _ = writeln!(s, "model.decoder_strides = {}", list(&self.decoder_strides));
        let _ = writeln!(s, "model.decoder_positions = {}", self.decoder_positions);
        let _ = writeln!(s, "model.dropout = {}", self.dropout);
        let _ = writeln!(s, "model.ln_eps = {:e}", self.ln_eps);
        let _ = writeln!(s, "model.headwise_norm = {}", self.headwise_norm);
        let a = &self.ablation;
        let _ = writeln!(s, "ablation.da = {}", a.da);
        let _ = writeln!(s, "ablation.se = {}", a.se);
        let _ = writeln!(s, "ablation.ca = {}", a.ca);
        let _ = writeln!(s, "ablation.fa = {}", a.fa);
        let _ = writeln!(s, "ablation.id = {}", a.id);
        s
    }

    /// Apply one `model.*` or `ablation.*` key. Returns `Ok(false)` for keys
    /// outside those namespaces.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num<N: core::str::FromStr>(k: &str, v: &str) -> Result<N> {
            v.trim().parse().map_err(|_| Error::Config(format!("{k}: cannot parse {v:?}")))
        }
        fn arr<const N: usize>(k: &str, v: &str) -> Result<[usize; N]> {
            let items: Vec<usize> = v.split(',').map(|x| num(k, x)).collect::<Result<_>>()?;
            items.try_into().map_err(|_| Error::Config(format!("{k}: expected {N} comma-separated values")))
        }
        match key {
            "model.d" => self.d = num(key, value)?,
            "model.n_tok" => self.n_tok = num(key, value)?,
            "model.n_seq" => self.n_seq = num(key, value)?,
            "model.samples" => self.samples = num(key, value)?,
            "model.layers" => self.layers = num(key, value)?,
            "model.mdta_heads" => self.mdta_heads = num(key, value)?,
            "model.seq_heads" => self.seq_heads = num(key, value)?,
            "model.mlp_ratio" => self.mlp_ratio = num(key, value)?,
            "model.classes" => self.classes = num(key, value)?,
            "model.conv_channels" => self.conv_channels = arr(key, value)?,
            "model.conv_kernel" => self.conv_kernel = num(key, value)?,
            "model.pools" => self.pools = arr(key, value)?,
            "model.decoder_channels" => self.decoder_channels = arr(key, value)?,
            "model.decoder_strides" => self.decoder_strides = arr(key, value)?,
            "model.decoder_positions" => self.decoder_positions = num(key, value)?,
            "model.dropout" => self.dropout = num(key, value)?,
            "model.ln_eps" => self.ln_eps = num(key, value)?,
            "model.headwise_norm" => self.headwise_norm = num(key, value)?,
            "ablation.da" => self.ablation.da = num(key, value)?,
            "ablation.se" => self.ablation.se = num(key, value)?,
            "ablation.ca" => self.ablation.ca = num(key, value)?,
            "ablation.fa" => self.ablation.fa = num(key, value)?,
            "ablation.id" => self.ablation.id = num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::standard()
    }
}

/// Split `key = value` text into pairs, skipping blank lines and `#` comments.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
        out.push((String::from(k.trim()), String::from(v.trim())));
    }
    Ok(out)
}
