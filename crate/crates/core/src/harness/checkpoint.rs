//! Training state to and from checkpoint blobs.
//!
//! Blobs: `config` (configuration text), `state` (counters as `key = value`),
//! `log` (loss log CSV), `theta/<name>` and `phi/<name>` (parameters),
//! `adam/<group>/m/<i>` and `adam/<group>/v/<i>` (optimizer moments).

use std::collections::HashMap;

use super::config::RunConfig;
use super::formats::{decode_tensor, encode_tensor, Checkpoint};
use crate::backbone::{SrnParams, SrnShape};
use crate::error::{Error, Result};
use crate::gstnet::GstParams;
use crate::nn::ParamSet;
use crate::trainer::{Adam, LossLog, Model, TrainState};

fn push_params(c: &mut Checkpoint, prefix: &str, p: &ParamSet) -> Result<()> {
    for (name, t) in p.iter() {
        c.push(format!("{prefix}/{name}"), encode_tensor(t)?);
    }
    Ok(())
}

fn push_adam(c: &mut Checkpoint, group: &str, a: &Adam) -> Result<()> {
    for (i, (m, v)) in a.m.iter().zip(&a.v).enumerate() {
        c.push(format!("adam/{group}/m/{i}"), encode_tensor(m)?);
        c.push(format!("adam/{group}/v/{i}"), encode_tensor(v)?);
    }
    Ok(())
}

fn adam_text(group: &str, a: &Adam) -> String {
    format!(
        "{group}_t = {}\n{group}_beta1 = {}\n{group}_beta2 = {}\n{group}_eps = {}\n",
        a.t, a.beta1, a.beta2, a.eps
    )
}

/// Packs a training state and the configuration that produced it.
pub fn state_to_checkpoint(state: &TrainState, cfg: &RunConfig) -> Result<Checkpoint> {
    let mut c = Checkpoint::default();
    c.push("config", cfg.to_text().into_bytes());
    let pe = state.phase_epochs.map(|e| e.to_string()).join(" ");
    let mut text = format!(
        "strategy = {}\nchannels = {}\nepoch = {}\nphase_epochs = {pe}\nwarmup_done = {}\nrounds_done = {}\nhas_phi = {}\n",
        state.strategy,
        state.model.theta.shape().channels,
        state.epoch,
        state.warmup_done,
        state.rounds_done,
        state.model.phi.is_some(),
    );
    text.push_str(&adam_text("theta", &state.theta_opt));
    if let Some(a) = &state.phi_opt {
        text.push_str(&adam_text("phi", a));
    }
    c.push("state", text.into_bytes());
    c.push("log", state.log.to_csv().into_bytes());
    push_params(&mut c, "theta", state.model.theta.params())?;
    if let Some(phi) = &state.model.phi {
        push_params(&mut c, "phi", phi.params())?;
    }
    push_adam(&mut c, "theta", &state.theta_opt)?;
    if let Some(a) = &state.phi_opt {
        push_adam(&mut c, "phi", a)?;
    }
    Ok(c)
}

fn utf8<'a>(c: &'a Checkpoint, name: &str) -> Result<&'a str> {
    std::str::from_utf8(c.get(name)?).map_err(|e| Error::Config(format!("checkpoint blob `{name}` is not UTF-8: {e}")))
}

struct Fields(HashMap<String, String>);

impl Fields {
    fn parse(text: &str) -> Result<Self> {
        let mut map = HashMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("checkpoint state: bad line `{line}`")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self(map))
    }

    fn raw(&self, key: &str) -> Result<&str> {
        self.0
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Config(format!("checkpoint state: missing `{key}`")))
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.raw(key)?;
        v.parse().map_err(|_| Error::Config(format!("checkpoint state: bad value `{v}` for `{key}`")))
    }
}

fn load_params(c: &Checkpoint, prefix: &str) -> Result<ParamSet> {
    let mut p = ParamSet::new();
    let lead = format!("{prefix}/");
    for name in c.names() {
        if let Some(rest) = name.strip_prefix(&lead) {
            p.push(rest, decode_tensor(c.get(name)?)?);
        }
    }
    Ok(p)
}

fn load_adam(c: &Checkpoint, f: &Fields, group: &str, params: &ParamSet) -> Result<Adam> {
    let mut a = Adam::new(params);
    a.t = f.get(&format!("{group}_t"))?;
    a.beta1 = f.get(&format!("{group}_beta1"))?;
    a.beta2 = f.get(&format!("{group}_beta2"))?;
    a.eps = f.get(&format!("{group}_eps"))?;
    for i in 0..params.len() {
        let m = decode_tensor(c.get(&format!("adam/{group}/m/{i}"))?)?;
        let v = decode_tensor(c.get(&format!("adam/{group}/v/{i}"))?)?;
        let want = params.tensors()[i].shape();
        if m.shape() != want || v.shape() != want {
            return Err(Error::Shape(format!("adam/{group}/{i}: moment shape does not match its parameter")));
        }
        a.m[i] = m;
        a.v[i] = v;
    }
    Ok(a)
}

/// Unpacks a checkpoint written by [`state_to_checkpoint`].
pub fn state_from_checkpoint(c: &Checkpoint) -> Result<(RunConfig, TrainState)> {
    let cfg = RunConfig::parse(utf8(c, "config")?)?;
    let f = Fields::parse(utf8(c, "state")?)?;
    let channels: usize = f.get("channels")?;
    let shape = SrnShape::new(channels, cfg.train.backbone_width, cfg.train.backbone_blocks)?;
    let theta = SrnParams::from_param_set(shape, load_params(c, "theta")?)?;
    let phi = if f.get::<bool>("has_phi")? {
        Some(GstParams::from_param_set(cfg.train.gst, load_params(c, "phi")?)?)
    } else {
        None
    };
    let theta_opt = load_adam(c, &f, "theta", theta.params())?;
    let phi_opt = phi.as_ref().map(|p| load_adam(c, &f, "phi", p.params())).transpose()?;

    let pe: Vec<usize> = f
        .raw("phase_epochs")?
        .split_whitespace()
        .map(|s| s.parse().map_err(|_| Error::Config(format!("checkpoint state: bad phase epoch `{s}`"))))
        .collect::<Result<_>>()?;
    let phase_epochs: [usize; 4] = pe
        .try_into()
        .map_err(|_| Error::Config("checkpoint state: phase_epochs needs 4 values".into()))?;
    let state = TrainState {
        strategy: f.raw("strategy")?.to_string(),
        model: Model { theta, phi },
        theta_opt,
        phi_opt,
        epoch: f.get("epoch")?,
        phase_epochs,
        warmup_done: f.get("warmup_done")?,
        rounds_done: f.get("rounds_done")?,
        log: LossLog::from_csv(utf8(c, "log")?)?,
    };
    Ok((cfg, state))
}
