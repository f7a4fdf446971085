//! Training schedule and its plain-text form.
//!
//! ```text
//! # comment
//! kernels=25,45,75
//! phase1.size=512x384
//! phase1.loss=l1
//! phase1.iterations=2000
//! phase1.lr_start=1e-3
//! phase1.lr_end=1e-4
//! ```
//!
//! `size=WxH` may be replaced by separate `width` and `height` keys;
//! `lr_end` defaults to `lr_start`. Adam's `beta1`, `beta2` and `epsilon`
//! may be set at top level.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use super::adam::AdamHyper;
use crate::error::{BokehError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    L1,
    /// Negative mean SSIM.
    NegSsim,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::L1 => "l1",
            LossKind::NegSsim => "ssim",
        }
    }
}

impl FromStr for LossKind {
    type Err = BokehError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "l1" => Ok(LossKind::L1),
            "ssim" | "neg-ssim" | "negssim" => Ok(LossKind::NegSsim),
            other => Err(BokehError::InvalidParameter(format!("unknown loss '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseConfig {
    pub phase: u32,
    pub width: usize,
    pub height: usize,
    pub loss: LossKind,
    pub iterations: usize,
    pub lr_start: f64,
    pub lr_end: f64,
}

impl PhaseConfig {
    /// Learning rate at iteration `t`, decaying geometrically from
    /// `lr_start` (first iteration) to `lr_end` (last iteration).
    pub fn lr_at(&self, t: usize) -> f64 {
        if self.iterations <= 1 {
            return self.lr_start;
        }
        let frac = t as f64 / (self.iterations - 1) as f64;
        self.lr_start * (self.lr_end / self.lr_start).powf(frac)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(BokehError::InvalidParameter(format!("phase {}: {msg}", self.phase)));
        if self.width == 0 || self.height == 0 {
            return bad(format!("size {}x{}", self.width, self.height));
        }
        for lr in [self.lr_start, self.lr_end] {
            if !(lr.is_finite() && lr > 0.0) {
                return bad(format!("learning rate {lr}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub kernels: Vec<usize>,
    pub phases: Vec<PhaseConfig>,
    pub hyper: AdamHyper,
}

impl TrainConfig {
    /// Three phases at the full training resolutions: L1 at 512x384, L1 at
    /// 1024x768, then negative SSIM at 1024x768.
    pub fn full_scale() -> Self {
        Self::three_phase((512, 384), (1024, 768), [2000, 1000, 500])
    }

    /// Three phases for 64x64 synthetic scenes, all at the scene size, where
    /// the targets are exactly reachable.
    pub fn desk() -> Self {
        Self::three_phase((64, 64), (64, 64), [3000, 1000, 500])
    }

    fn three_phase(low: (usize, usize), high: (usize, usize), iterations: [usize; 3]) -> Self {
        let phase = |phase: u32, (width, height): (usize, usize), loss, lr_start, lr_end| PhaseConfig {
            phase,
            width,
            height,
            loss,
            iterations: iterations[phase as usize - 1],
            lr_start,
            lr_end,
        };
        TrainConfig {
            kernels: crate::DEFAULT_KERNELS.to_vec(),
            phases: vec![
                phase(1, low, LossKind::L1, 1e-3, 1e-4),
                phase(2, high, LossKind::L1, 1e-4, 1e-5),
                phase(3, high, LossKind::NegSsim, 1e-4, 1e-5),
            ],
            hyper: AdamHyper::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernels.is_empty() {
            return Err(BokehError::InvalidParameter("no kernel sizes".into()));
        }
        for &k in &self.kernels {
            if k == 0 || k % 2 == 0 {
                return Err(BokehError::InvalidKernelSize(k));
            }
        }
        self.hyper.validate()?;
        self.phases.iter().try_for_each(PhaseConfig::validate)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kernels = crate::DEFAULT_KERNELS.to_vec();
        let mut hyper = AdamHyper::default();
        let mut raw: BTreeMap<u32, BTreeMap<String, (usize, String)>> = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            let n = idx + 1;
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err(n, "expected key=value"))?;
            let (key, value) = (key.trim(), value.trim());
            if let Some(rest) = key.strip_prefix("phase") {
                let (id, field) = rest
                    .split_once('.')
                    .ok_or_else(|| config_err(n, "expected phaseN.key"))?;
                let id: u32 = id.parse().map_err(|_| config_err(n, "bad phase number"))?;
                if id == 0 {
                    return Err(config_err(n, "phase numbers start at 1"));
                }
                raw.entry(id)
                    .or_default()
                    .insert(field.trim().to_string(), (n, value.to_string()));
                continue;
            }
            match key {
                "kernels" => kernels = parse_list(value).map_err(|e| config_err(n, &e))?,
                "beta1" => hyper.beta1 = parse_num(n, value)?,
                "beta2" => hyper.beta2 = parse_num(n, value)?,
                "epsilon" => hyper.epsilon = parse_num(n, value)?,
                _ => return Err(config_err(n, &format!("unknown key '{key}'"))),
            }
        }

        let mut phases = Vec::new();
        for (id, fields) in raw {
            let get = |k: &str| fields.get(k).map(|(n, v)| (*n, v.as_str()));
            let need = |k: &str| {
                get(k).ok_or_else(|| BokehError::Config {
                    line: 0,
                    reason: format!("phase{id}.{k} missing"),
                })
            };
            for (k, (n, _)) in &fields {
                if !["size", "width", "height", "loss", "iterations", "lr_start", "lr_end"].contains(&k.as_str()) {
                    return Err(config_err(*n, &format!("unknown key 'phase{id}.{k}'")));
                }
            }
            let (width, height) = match get("size") {
                Some((n, v)) => parse_size(v).map_err(|e| config_err(n, &e))?,
                None => {
                    let (nw, w) = need("width")?;
                    let (nh, h) = need("height")?;
                    (parse_num(nw, w)?, parse_num(nh, h)?)
                }
            };
            let (nl, loss) = need("loss")?;
            let (ni, iters) = need("iterations")?;
            let (ns, lr_start) = need("lr_start")?;
            let lr_start: f64 = parse_num(ns, lr_start)?;
            let lr_end = match get("lr_end") {
                Some((n, v)) => parse_num(n, v)?,
                None => lr_start,
            };
            phases.push(PhaseConfig {
                phase: id,
                width,
                height,
                loss: loss.parse().map_err(|e: BokehError| config_err(nl, &e.to_string()))?,
                iterations: parse_num(ni, iters)?,
                lr_start,
                lr_end,
            });
        }
        let config = TrainConfig { kernels, phases, hyper };
        config.validate()?;
        Ok(config)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let ks: Vec<String> = self.kernels.iter().map(|k| k.to_string()).collect();
        let _ = writeln!(out, "kernels={}", ks.join(","));
        let h = &self.hyper;
        let _ = writeln!(out, "beta1={}\nbeta2={}\nepsilon={:e}", h.beta1, h.beta2, h.epsilon);
        for p in &self.phases {
            let id = p.phase;
            let _ = writeln!(out, "phase{id}.size={}x{}", p.width, p.height);
            let _ = writeln!(out, "phase{id}.loss={}", p.loss.name());
            let _ = writeln!(out, "phase{id}.iterations={}", p.iterations);
            let _ = writeln!(out, "phase{id}.lr_start={:e}", p.lr_start);
            let _ = writeln!(out, "phase{id}.lr_end={:e}", p.lr_end);
        }
        out
    }
}

fn config_err(line: usize, reason: &str) -> BokehError {
    BokehError::Config {
        line,
        reason: reason.to_string(),
    }
}

fn parse_num<T: FromStr>(line: usize, s: &str) -> Result<T> {
    s.parse().map_err(|_| config_err(line, &format!("bad number '{s}'")))
}

/// Parses `WxH`.
pub fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got '{s}'"))?;
    let w: usize = w.trim().parse().map_err(|_| format!("bad width in '{s}'"))?;
    let h: usize = h.trim().parse().map_err(|_| format!("bad height in '{s}'"))?;
    if w == 0 || h == 0 {
        return Err(format!("zero dimension in '{s}'"));
    }
    Ok((w, h))
}

/// Parses a comma-separated list of positive integers.
pub fn parse_list(s: &str) -> std::result::Result<Vec<usize>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|_| format!("bad integer '{p}'")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_decays_geometrically() {
        let p = PhaseConfig {
            phase: 1,
            width: 8,
            height: 8,
            loss: LossKind::L1,
            iterations: 3,
            lr_start: 1e-3,
            lr_end: 1e-5,
        };
        assert_eq!(p.lr_at(0), 1e-3);
        assert!((p.lr_at(1) - 1e-4).abs() < 1e-15);
        assert!((p.lr_at(2) - 1e-5).abs() < 1e-17);
        let one = PhaseConfig { iterations: 1, ..p };
        assert_eq!(one.lr_at(0), 1e-3);
    }

    #[test]
    fn parses_and_round_trips() {
        let text = "# desk\nkernels = 3,5\nphase2.width=32\nphase2.height=16\nphase2.loss=ssim\n\
                    phase2.iterations=7\nphase2.lr_start=1e-4\nphase1.size=8x4\nphase1.loss=l1  # low res\n\
                    phase1.iterations=0\nphase1.lr_start=0.001\nphase1.lr_end=0.0001\n";
        let cfg = TrainConfig::parse(text).unwrap();
        assert_eq!(cfg.kernels, vec![3, 5]);
        assert_eq!(cfg.phases.len(), 2);
        assert_eq!(cfg.phases[0].phase, 1);
        assert_eq!((cfg.phases[0].width, cfg.phases[0].height), (8, 4));
        assert_eq!(cfg.phases[1].loss, LossKind::NegSsim);
        assert_eq!(cfg.phases[1].lr_end, 1e-4);
        assert_eq!(TrainConfig::parse(&cfg.to_text()).unwrap(), cfg);
        for preset in [TrainConfig::desk(), TrainConfig::full_scale()] {
            assert_eq!(TrainConfig::parse(&preset.to_text()).unwrap(), preset);
        }
    }

    #[test]
    fn full_scale_resolutions() {
        let cfg = TrainConfig::full_scale();
        let dims: Vec<_> = cfg.phases.iter().map(|p| (p.width, p.height, p.loss)).collect();
        assert_eq!(
            dims,
            vec![
                (512, 384, LossKind::L1),
                (1024, 768, LossKind::L1),
                (1024, 768, LossKind::NegSsim)
            ]
        );
        assert_eq!(cfg.phases[2].lr_end, 1e-5);
    }

    #[test]
    fn rejects_malformed() {
        for text in [
            "phase1.size=8x8\nphase1.loss=l1\nphase1.iterations=1",
            "phase1.size=8x8\nphase1.loss=l2\nphase1.iterations=1\nphase1.lr_start=1",
            "phase1.size=8\nphase1.loss=l1\nphase1.iterations=1\nphase1.lr_start=1",
            "phase1.size=8x8\nphase1.loss=l1\nphase1.iterations=-1\nphase1.lr_start=1",
            "phase1.size=8x8\nphase1.loss=l1\nphase1.iterations=1\nphase1.lr_start=0",
            "phase1.colour=red",
            "phase0.size=8x8",
            "kernels=4",
            "just text",
            "speed=3",
        ] {
            assert!(TrainConfig::parse(text).is_err(), "{text}");
        }
        match TrainConfig::parse("\n\nbogus=1") {
            Err(BokehError::Config { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }
}
