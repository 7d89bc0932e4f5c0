//! Published reference figures and a reconciliation of the residual between
//! them and this tool's reconstruction.
//!
//! Several details of the ThreshNet architectures are not pinned down by
//! their published description: stem widths, what a harmonic block emits,
//! whether transitions carry batch-norm, and whether the channel list names
//! block inputs or transition outputs. [`reconcile`] rebuilds the network
//! under each alternative and reports how far each moves the totals.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::config::{ChannelLayout, HarmonicOutput, NetworkSpec};
use crate::cost::cost_with_shapes;
use crate::error::Result;
use crate::graph::Op;
use crate::memplan::{traffic, TrafficOptions};
use crate::shapes::{propagate, TensorShape};
use crate::topology::build_graph;

/// One row of the published comparison table (224x224, 1000 classes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub name: Cow<'static, str>,
    pub params_m: f64,
    pub macs_g: f64,
    pub flops_g: f64,
    pub memrw_mb: f64,
}

pub const REFERENCES: [Reference; 3] = [
    Reference {
        name: Cow::Borrowed("densenet121"),
        params_m: 7.97,
        macs_g: 5.74,
        flops_g: 2.88,
        memrw_mb: 359.71,
    },
    Reference {
        name: Cow::Borrowed("threshnet79"),
        params_m: 15.32,
        macs_g: 6.90,
        flops_g: 3.46,
        memrw_mb: 299.96,
    },
    Reference {
        name: Cow::Borrowed("threshnet95"),
        params_m: 17.14,
        macs_g: 8.12,
        flops_g: 4.07,
        memrw_mb: 360.30,
    },
];

pub fn reference(name: &str) -> Option<Reference> {
    REFERENCES.iter().find(|r| r.name.eq_ignore_ascii_case(name)).cloned()
}

/// Totals of one network variant at a given input size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub depth: u32,
    pub params: u64,
    pub macc: u64,
    pub memrw_mb: f64,
    pub memrw_zero_copy_mb: f64,
    /// Parameters held by batch-norm nodes inside transitions.
    pub transition_bn_params: u64,
    pub block_inputs: Vec<u32>,
}

pub fn profile(spec: &NetworkSpec, input_size: u32) -> Result<Profile> {
    let graph = build_graph(spec)?;
    let shapes = propagate(&graph, TensorShape::image(1, input_size))?;
    let cost = cost_with_shapes(&graph, &shapes);
    let mem = |zero_copy_concat| {
        traffic(&graph, &shapes, &cost, TrafficOptions { zero_copy_concat })
            .map_err(|e| crate::Error::Invariant(e.to_string()))
    };
    let transition_bn_params = graph
        .nodes()
        .iter()
        .filter(|n| n.op == Op::BatchNorm && n.name.starts_with('t'))
        .map(|n| cost.per_node[n.id].params)
        .sum();
    Ok(Profile {
        depth: cost.depth,
        params: cost.total_params,
        macc: cost.total_macc,
        memrw_mb: mem(false)?.memrw_mb,
        memrw_zero_copy_mb: mem(true)?.memrw_mb,
        transition_bn_params,
        block_inputs: shapes.block_inputs(&graph).iter().map(|s| s.c).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub convention: String,
    pub profile: Profile,
    /// Relative parameter error against the reference, in percent.
    pub params_delta_pct: Option<f64>,
    pub macc_delta_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reconciliation {
    pub network: String,
    pub reference: Option<Reference>,
    pub variants: Vec<Variant>,
}

fn pct(value: f64, reference: f64) -> f64 {
    100.0 * (value - reference) / reference
}

/// Rebuilds `spec` under each alternative convention. The first variant is
/// always the spec as given.
pub fn reconcile(spec: &NetworkSpec) -> Result<Reconciliation> {
    let reference = reference(&spec.name);
    let two_stem = spec.stem.convs.len() >= 2;
    let mut candidates: Vec<(String, NetworkSpec)> = vec![("as built".into(), spec.clone())];

    let mut s = spec.clone();
    s.harmonic_output = HarmonicOutput::OddAndFinal;
    candidates.push(("harmonic output drops block input".into(), s));

    if two_stem {
        let mut s = spec.clone();
        s.stem.convs[0].out_channels = 32;
        candidates.push(("first stem conv 32 wide".into(), s));
    }

    let mut s = spec.clone();
    s.channel_layout = ChannelLayout::TransitionOutput;
    if two_stem {
        s.stem.convs[1].out_channels = 64;
    }
    candidates.push((
        "channel list = transition outputs, stem 64".into(),
        s.clone(),
    ));

    if two_stem {
        s.stem.convs[0].out_channels = 32;
    }
    s.harmonic_output = HarmonicOutput::OddAndFinal;
    candidates.push((
        "transition outputs + stem 32/64 + odd-only harmonic output".into(),
        s,
    ));

    let mut variants = Vec::new();
    for (convention, spec) in candidates {
        let profile = profile(&spec, 224)?;
        variants.push(Variant {
            params_delta_pct: reference.as_ref().map(|r| pct(profile.params as f64 / 1e6, r.params_m)),
            macc_delta_pct: reference.as_ref().map(|r| pct(profile.macc as f64 / 1e9, r.flops_g)),
            convention,
            profile,
        });
    }
    if let Some(base) = variants.first().cloned() {
        let params = base.profile.params - base.profile.transition_bn_params;
        variants.insert(
            1,
            Variant {
                convention: "transitions without batch-norm".into(),
                params_delta_pct: reference.as_ref().map(|r| pct(params as f64 / 1e6, r.params_m)),
                profile: Profile {
                    params,
                    transition_bn_params: 0,
                    ..base.profile
                },
                macc_delta_pct: base.macc_delta_pct,
            },
        );
    }
    Ok(Reconciliation {
        network: spec.name.clone(),
        reference,
        variants,
    })
}

impl Reconciliation {
    pub fn render(&self) -> String {
        let mut out = String::new();
        match &self.reference {
            Some(r) => out.push_str(&format!(
                "Reconciliation for {} against reference Params {:.2} M, FLOPs {:.2} G, MemR+W {:.2} MB\n",
                self.network, r.params_m, r.flops_g, r.memrw_mb
            )),
            None => out.push_str(&format!("Convention sensitivity for {}\n", self.network)),
        }
        out.push_str(&format!(
            "  {:<58} {:>5} {:>10} {:>8} {:>9} {:>8} {:>11} {:>11}\n",
            "convention", "depth", "Params(M)", "dParams", "FLOPs(G)", "dFLOPs", "MemR+W(MB)", "zero-copy"
        ));
        for v in &self.variants {
            let d = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |x| format!("{x:+.1}%"));
            out.push_str(&format!(
                "  {:<58} {:>5} {:>10.2} {:>8} {:>9.2} {:>8} {:>11.2} {:>11.2}\n",
                v.convention,
                v.profile.depth,
                v.profile.params as f64 / 1e6,
                d(v.params_delta_pct),
                v.profile.macc as f64 / 1e9,
                d(v.macc_delta_pct),
                v.profile.memrw_mb,
                v.profile.memrw_zero_copy_mb
            ));
        }
        out
    }
}
