//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::process::Command;
use std::time::{Duration, Instant};

use threshnet::calibration::{reconcile, reference};
use threshnet::cli::{analyze, compile};
use threshnet::config::{preset, HarmonicOutput};
use threshnet::cost::{depth, op_macc};
use threshnet::memplan::{schedule, tensor_bytes, TrafficOptions};
use threshnet::refexec::{exec_naive, exec_scheduled, exec_traced, init_weights, Tensor};
use threshnet::shapes::{propagate, TensorShape};
use threshnet::topology::{
    build_block_graph, build_graph, dense_layer_inputs, harmonic_layer_inputs, harmonic_layer_width, BlockShape,
    ConnectionMode,
};

use common::{dense_inputs_oracle, harmonic_inputs_oracle, interval_peak, nu2, random_spec, width_oracle};

const DENSENET_PARAMS_TOL: f64 = 0.02;
const DENSENET_MACC_TOL: f64 = 0.05;
const THRESHNET_PARAMS_TOL: f64 = 0.30;
const FAST: Duration = Duration::from_secs(1);
const EXEC_BUDGET: Duration = Duration::from_secs(600);
const MEMPLAN_BUDGET: Duration = Duration::from_secs(60);

const GOLDEN_EXEC: &str = "output (1,10,1,1)\nchecksum 174cc8860382850b\n";
const GOLDEN_DOT_FNV: &str = "f8c10d33758bd972";

type Outcome = Result<String, String>;

fn within(value: f64, target: f64, tol: f64) -> bool {
    (value - target).abs() <= tol * target
}

fn timed(budget: Duration, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let r = f();
    let took = start.elapsed();
    match r {
        Ok(msg) if took > budget => Err(format!("{msg}; took {took:.2?}, budget {budget:?}")),
        Ok(msg) => Ok(format!("{msg} [{took:.2?}]")),
        Err(msg) => Err(format!("{msg} [{took:.2?}]")),
    }
}

fn c1_densenet_calibration() -> Outcome {
    timed(FAST, || {
        let doc = analyze(&compile(preset("densenet121").unwrap(), 224, Some(1000)).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let (p, f) = (doc.summary.params_m, doc.summary.flops_g);
        let msg = format!("params {p:.3} M (7.97 +/-2%), macc {f:.3} G (2.88 +/-5%)");
        if within(p, 7.97, DENSENET_PARAMS_TOL) && within(f, 2.88, DENSENET_MACC_TOL) {
            Ok(msg)
        } else {
            Err(msg)
        }
    })
}

fn c2_depths() -> Outcome {
    timed(FAST, || {
        let got: Vec<(String, u32)> = ["threshnet79", "threshnet95", "densenet121"]
            .iter()
            .map(|n| (n.to_string(), depth(&build_graph(&preset(n).unwrap()).unwrap())))
            .collect();
        let msg = format!("{got:?}");
        if got.iter().map(|g| g.1).eq([79, 95, 121]) {
            Ok(msg)
        } else {
            Err(msg)
        }
    })
}

fn c3_shape_schedule() -> Outcome {
    timed(FAST, || {
        let g = build_graph(&preset("threshnet79").unwrap()).unwrap();
        let shapes = propagate(&g, TensorShape::image(1, 224)).map_err(|e| e.to_string())?;
        let blocks = shapes.block_inputs(&g);
        let sizes: Vec<u32> = blocks.iter().map(|s| s.h).collect();
        let chans: Vec<u32> = blocks.iter().map(|s| s.c).collect();
        let msg = format!("sizes {sizes:?}, channels {chans:?}");
        if sizes == [56, 28, 14, 14, 7] && chans == [128, 192, 288, 480, 960] {
            Ok(msg)
        } else {
            Err(msg)
        }
    })
}

fn c4_threshnet_calibration() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    for name in ["threshnet79", "threshnet95"] {
        let spec = preset(name).unwrap();
        let r = reconcile(&spec).map_err(|e| e.to_string())?;
        let target = reference(name).unwrap().params_m;
        let got = r.variants[0].profile.params as f64 / 1e6;
        pass &= within(got, target, THRESHNET_PARAMS_TOL);
        lines.push(format!("{name} params {got:.2} M vs {target:.2} M +/-30%"));
        print!("{}", r.render());
    }
    let msg = format!("{}; residual attributed per convention in the table above", lines.join(", "));
    if pass {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c5_traffic_ordering() -> Outcome {
    let memrw = |name: &str| -> Result<f64, String> {
        let c = compile(preset(name).unwrap(), 224, Some(1000)).map_err(|e| e.to_string())?;
        Ok(analyze(&c).map_err(|e| e.to_string())?.summary.memrw_mb)
    };
    let (t, d) = (memrw("threshnet79")?, memrw("densenet121")?);
    let msg = format!("MemR+W threshnet79 {t:.2} MB vs densenet121 {d:.2} MB");
    if t < d {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c6_connectivity() -> Outcome {
    timed(FAST, || {
        for l in 1..=64 {
            if dense_layer_inputs(l).unwrap() != dense_inputs_oracle(l)
                || harmonic_layer_inputs(l).unwrap() != harmonic_inputs_oracle(l)
            {
                return Err(format!("input set mismatch at layer {l}"));
            }
        }
        for layers in 1..=16usize {
            let widths = vec![8; layers];
            for (mode, expect) in [
                (ConnectionMode::Dense, layers * (layers + 1) / 2),
                (ConnectionMode::Harmonic, (1..=layers).map(|l| nu2(l) as usize + 1).sum()),
            ] {
                let brute: usize = (1..=layers)
                    .map(|l| match mode {
                        ConnectionMode::Dense => dense_inputs_oracle(l).len(),
                        ConnectionMode::Harmonic => harmonic_inputs_oracle(l).len(),
                    })
                    .sum();
                let shape = BlockShape {
                    mode,
                    widths: widths.clone(),
                    bottleneck: None,
                    harmonic_output: HarmonicOutput::WithInput,
                };
                let g = build_block_graph(16, &shape).map_err(|e| e.to_string())?;
                let built = g.block_connection_count(0);
                if built != expect || brute != expect {
                    return Err(format!("{mode:?} L={layers}: built {built}, formula {expect}, brute {brute}"));
                }
            }
        }
        let h8: usize = (1..=8).map(|l| harmonic_inputs_oracle(l).len()).sum();
        if h8 != 15 {
            return Err(format!("harmonic L=8 has {h8} edges"));
        }
        Ok("dense L(L+1)/2 and harmonic sum(nu2+1) for L in 1..=16; harmonic L=8 -> 15".into())
    })
}

fn c7_width_law() -> Outcome {
    timed(FAST, || {
        for k in [32, 40, 160] {
            for l in 1..=16 {
                let (got, want) = (harmonic_layer_width(k, 1.7, l), width_oracle(k, 1.7, l));
                if got != want {
                    return Err(format!("k={k} l={l}: {got} vs {want}"));
                }
            }
        }
        let spot = (harmonic_layer_width(40, 1.7, 16), harmonic_layer_width(160, 1.7, 4));
        if spot != (334, 462) {
            return Err(format!("spot values {spot:?}"));
        }
        Ok("k in {32,40,160}, l in 1..=16; 40->334 at l=16, 160->462 at l=4".into())
    })
}

fn c8_executor_equivalence() -> Outcome {
    timed(EXEC_BUDGET, || {
        let mut cases: Vec<(threshnet::config::NetworkSpec, u32, u64)> = vec![(preset("threshnet79").unwrap(), 64, 42)];
        cases.extend((0..10).map(|s| {
            let (spec, size) = random_spec(s);
            (spec, size, s)
        }));
        for (spec, size, seed) in &cases {
            let g = build_graph(spec).unwrap();
            let shapes = propagate(&g, TensorShape::image(1, *size)).map_err(|e| e.to_string())?;
            let w = init_weights(&g, &shapes, *seed);
            let x = Tensor::random(TensorShape::image(1, *size), *seed);
            let a = exec_naive(&g, &shapes, &w, &x).map_err(|e| e.to_string())?;
            let b = exec_scheduled(&g, &shapes, &schedule(&g), &w, &x).map_err(|e| e.to_string())?;
            if !a.data.iter().zip(&b.data).all(|(p, q)| p.to_bits() == q.to_bits()) {
                return Err(format!("{} diverges", spec.name));
            }
        }
        let mut nodes = 0;
        for seed in 100..110 {
            let (spec, size) = random_spec(seed);
            let g = build_graph(&spec).unwrap();
            let shapes = propagate(&g, TensorShape::image(1, size)).unwrap();
            let w = init_weights(&g, &shapes, seed);
            let t = exec_traced(&g, &shapes, &w, &Tensor::random(TensorShape::image(1, size), seed))
                .map_err(|e| e.to_string())?;
            for n in g.nodes() {
                if t.multiplies[n.id] != op_macc(n, &shapes.inputs(&g, n.id), shapes.output(n.id)) {
                    return Err(format!("multiply count mismatch at {} in {}", n.name, spec.name));
                }
                nodes += 1;
            }
        }
        Ok(format!("threshnet79@64 seed 42 + 10 random specs bit-identical; multiply counts match on {nodes} nodes"))
    })
}

fn c9_memory_plan() -> Outcome {
    timed(MEMPLAN_BUDGET, || {
        for name in ["threshnet79", "threshnet95", "densenet121"] {
            let g = build_graph(&preset(name).unwrap()).unwrap();
            let shapes = propagate(&g, TensorShape::image(1, 224)).unwrap();
            for zc in [false, true] {
                let bytes = tensor_bytes(&g, &shapes, TrafficOptions { zero_copy_concat: zc });
                threshnet::memplan::schedule_with(&g, zc).replay(&g, &bytes).map_err(|e| format!("{name}: {e}"))?;
            }
        }
        let mut checked = 0;
        for k in [32u32, 40, 160] {
            for layers in 4..=16usize {
                for widths in [
                    (1..=layers).map(|l| harmonic_layer_width(k, 1.7, l)).collect::<Vec<_>>(),
                    vec![k; layers],
                ] {
                    let mut peaks = Vec::new();
                    for mode in [ConnectionMode::Harmonic, ConnectionMode::Dense] {
                        let shape = BlockShape {
                            mode,
                            widths: widths.clone(),
                            bottleneck: None,
                            harmonic_output: HarmonicOutput::WithInput,
                        };
                        let g = build_block_graph(64, &shape).unwrap();
                        let shapes = propagate(&g, TensorShape::image(1, 8)).unwrap();
                        let bytes = tensor_bytes(&g, &shapes, TrafficOptions::default());
                        let peak = schedule(&g).replay(&g, &bytes).map_err(|e| e.to_string())?;
                        let oracle = interval_peak(&g, &bytes);
                        if peak != oracle {
                            return Err(format!("{mode:?} k={k} L={layers}: replay {peak} vs oracle {oracle}"));
                        }
                        peaks.push(peak);
                    }
                    if peaks[0] >= peaks[1] {
                        return Err(format!("k={k} L={layers}: harmonic {} >= dense {}", peaks[0], peaks[1]));
                    }
                    checked += 1;
                }
            }
        }
        Ok(format!("presets replay safely; harmonic < dense peak on {checked} matched blocks (oracle-checked)"))
    })
}

fn fnv(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

fn c10_determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_threshnet");
    let run = |args: &[&str]| -> Result<Vec<u8>, String> {
        let o = Command::new(bin).args(args).output().map_err(|e| e.to_string())?;
        if !o.status.success() {
            return Err(format!("{args:?} exited {:?}", o.status.code()));
        }
        Ok(o.stdout)
    };
    let exec_args = ["exec", "threshnet79", "--input", "64", "--seed", "42", "--classes", "10"];
    let dot_args = ["export", "densenet121", "--format", "dot"];
    let (e1, e2) = (run(&exec_args)?, run(&exec_args)?);
    let (d1, d2) = (run(&dot_args)?, run(&dot_args)?);
    let (j1, j2) = (
        run(&["export", "threshnet79", "--format", "json"])?,
        run(&["export", "threshnet79", "--format", "json"])?,
    );
    if e1 != e2 || d1 != d2 || j1 != j2 {
        return Err("repeated invocations differ".into());
    }
    // Goldens frozen on the first platform; matching them elsewhere is the
    // cross-platform check.
    let dot_digest = fnv(&d1);
    if e1 != GOLDEN_EXEC.as_bytes() || dot_digest != GOLDEN_DOT_FNV {
        return Err(format!(
            "output differs from frozen goldens: exec {:?}, dot digest {dot_digest}",
            String::from_utf8_lossy(&e1)
        ));
    }
    Ok(format!("exec/export byte-identical across runs and equal to frozen goldens (dot {dot_digest})"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("densenet121 calibration", c1_densenet_calibration),
        ("depth exactness", c2_depths),
        ("threshnet79 shape schedule", c3_shape_schedule),
        ("threshnet calibration +/-30% with reconciliation", c4_threshnet_calibration),
        ("traffic ordering threshnet79 < densenet121", c5_traffic_ordering),
        ("connectivity counting", c6_connectivity),
        ("harmonic width law", c7_width_law),
        ("executor equivalence", c8_executor_equivalence),
        ("memory-plan properties", c9_memory_plan),
        ("determinism", c10_determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(msg) => println!("PASS {:>2} {name}: {msg}", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {msg}", i + 1);
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
