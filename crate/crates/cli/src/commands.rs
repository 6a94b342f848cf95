use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, ensure, Context};
use sha2::{Digest, Sha256};

use pdnet_core::data::{self, encode_idx_f64, split, Dataset, Pair};
use pdnet_core::eval::{evaluate, evaluate_backprojection, robustness_eval, score};
use pdnet_core::gradcheck::{gradcheck, GradcheckOptions, Instance, InstanceSpec};
use pdnet_core::metrics::format_psnr;
use pdnet_core::network::{self, InitConfig};
use pdnet_core::operators::{AnalysisOperator, Grid};
use pdnet_core::pdhg::{pdhg_solve, objective, SolveOptions, StepSizes, StopCriteria};
use pdnet_core::rng::SeededRng;
use pdnet_core::train::{history_csv, train_with_progress};
use pdnet_core::{DegradationOperator, Image, NetworkParams};

use crate::config::{Regularizer, RunConfig, Split};
use crate::filters::filter_grids;
use crate::Failure;

type CmdResult<T = ()> = Result<T, Failure>;

fn runtime<T>(r: anyhow::Result<T>) -> CmdResult<T> {
    r.map_err(Failure::Runtime)
}

fn invalid<T>(r: anyhow::Result<T>) -> CmdResult<T> {
    r.map_err(Failure::Validation)
}

/// Shared state of the data-driven commands.
pub struct Session {
    pub config: RunConfig,
    pub verbose: bool,
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn snapshot(cfg: &RunConfig) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(cfg)?;
    write_file(&cfg.output_dir.join("config.json"), text + "\n")
}

fn load_images(cfg: &RunConfig) -> anyhow::Result<Vec<Image>> {
    let path = &cfg.data.images;
    let mut images = if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .with_context(|| format!("listing {}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")))
            .collect();
        files.sort();
        files
            .iter()
            .map(|f| data::load_pgm(f).with_context(|| format!("reading {}", f.display())))
            .collect::<anyhow::Result<Vec<_>>>()?
    } else {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        if bytes.get(2) == Some(&data::IDX_F64) {
            data::parse_idx_f64(&bytes)
        } else {
            data::parse_idx_images(&bytes)
        }
        .with_context(|| format!("parsing {}", path.display()))?
    };
    if let Some(limit) = cfg.data.limit {
        images.truncate(limit);
    }
    ensure!(!images.is_empty(), "no images found in {}", path.display());
    if let Some(p) = &cfg.data.patches {
        let seed = SeededRng::stream(cfg.seed, 100).next_u64();
        let mut patches = Vec::with_capacity(images.len() * p.per_image);
        for (i, img) in images.iter().enumerate() {
            let s = SeededRng::stream(seed, i as u64).next_u64();
            patches.extend(data::extract_patches(img, p.size.min(img.side()), p.per_image, s)?);
        }
        images = patches;
    }
    let side = images[0].side();
    ensure!(
        images.iter().all(|i| i.side() == side),
        "images have different sides; configure data.patches to crop them"
    );
    Ok(images)
}

pub struct Prepared {
    pub operator: DegradationOperator,
    pub train: Vec<Pair>,
    pub val: Vec<Pair>,
    pub test: Vec<Pair>,
}

impl Prepared {
    pub fn split(&self, which: Split) -> Vec<Pair> {
        match which {
            Split::Train => self.train.clone(),
            Split::Val => self.val.clone(),
            Split::Test => self.test.clone(),
            Split::All => [&self.train[..], &self.val[..], &self.test[..]].concat(),
        }
    }
}

fn synthesize(cfg: &RunConfig) -> CmdResult<Dataset> {
    let images = runtime(load_images(cfg))?;
    let side = images[0].side();
    if let Some(p) = &cfg.data.patches {
        invalid(cfg.validate_for_side(p.size.min(side)))?;
    } else {
        invalid(cfg.validate_for_side(side))?;
    }
    let a = invalid(cfg.degradation_operator(side))?;
    runtime(Dataset::synthesize(images, a, cfg.degradation.alpha, cfg.seeds().degrade).map_err(Into::into))
}

pub fn prepare(cfg: &RunConfig) -> CmdResult<Prepared> {
    let ds = synthesize(cfg)?;
    let (train, val, test) = runtime(split(ds.pairs, cfg.data.train_frac, cfg.data.val_frac, cfg.seeds().split).map_err(Into::into))?;
    Ok(Prepared {
        operator: ds.degradation,
        train,
        val,
        test,
    })
}

pub fn degrade(cfg: &RunConfig) -> CmdResult {
    let ds = synthesize(cfg)?;
    runtime((|| {
        snapshot(cfg)?;
        let dir = cfg.output_dir.join("dataset");
        let clean: Vec<&[f64]> = ds.pairs.iter().map(|p| p.clean.pixels()).collect();
        let degraded: Vec<&[f64]> = ds.pairs.iter().map(|p| p.degraded.values()).collect();
        let clean_bytes = encode_idx_f64(&clean)?;
        let degraded_bytes = encode_idx_f64(&degraded)?;
        write_file(&dir.join("clean.idx"), &clean_bytes)?;
        write_file(&dir.join("degraded.idx"), &degraded_bytes)?;
        let kind = ds.degradation.kind();
        let manifest = serde_json::json!({
            "task": cfg.task,
            "degradation": {
                "kind": kind.name(),
                "size_or_factor": kind.size_or_factor(),
                "image_side": ds.degradation.side(),
                "measurement_side": ds.degradation.out_side(),
                "norm": ds.degradation.norm(),
            },
            "alpha": cfg.degradation.alpha,
            "seed": cfg.seed,
            "count": ds.pairs.len(),
            "files": {
                "clean.idx": sha256_hex(&clean_bytes),
                "degraded.idx": sha256_hex(&degraded_bytes),
            },
        });
        write_file(&dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
        println!(
            "wrote {} pairs to {} (||A|| = {})",
            ds.pairs.len(),
            dir.display(),
            ds.degradation.norm()
        );
        Ok(())
    })())
}

fn export_grids(params: &NetworkParams, layer: usize, dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let l = params
        .layers
        .get(layer.wrapping_sub(1))
        .ok_or_else(|| anyhow!("layer {layer} is out of range 1..={}", params.depth()))?;
    let mut written = Vec::new();
    for g in filter_grids(&l.analysis) {
        let name = format!("layer{layer}_{}.pgm", g.label.replace(':', ""));
        let path = dir.join(name);
        write_file(&path, data::encode_pgm(g.width, g.height, &g.raster)?)?;
        written.push(path);
    }
    Ok(written)
}

pub fn train(ctx: &Session) -> CmdResult {
    let cfg = &ctx.config;
    let prepared = prepare(cfg)?;
    let specs = invalid(cfg.analysis_specs())?;
    let init = InitConfig {
        layers: cfg.network.layers,
        analysis: specs,
        stddev: cfg.network.init_stddev,
        tau: cfg.network.init_tau,
        mode: cfg.network.mode,
        seed: cfg.seeds().init,
    };
    let params = runtime(NetworkParams::init(prepared.operator.clone(), &init).map_err(Into::into))?;
    runtime(snapshot(cfg))?;
    let baseline = runtime(evaluate_backprojection(&prepared.operator, &prepared.val).map_err(Into::into))?;
    let verbose = ctx.verbose;
    let outcome = train_with_progress(params, &prepared.train, &prepared.val, &cfg.train_config(), &mut |row| {
        if verbose {
            eprintln!(
                "iter {:>6}  loss {:.6e}  val psnr {:.3}  ssim {:.4}",
                row.iteration, row.loss, row.val_psnr, row.val_ssim
            );
        }
    })
    .context("training failed");
    let outcome = runtime(outcome)?;
    runtime((|| {
        let out = &cfg.output_dir;
        network::serialize(&outcome.final_params, &out.join("model_final.json"))?;
        network::serialize(&outcome.best_params, &out.join("model_best.json"))?;
        write_file(&out.join("history.csv"), history_csv(&outcome.history))?;
        let depth = outcome.final_params.depth();
        export_grids(&outcome.final_params, depth, &out.join("filters"))?;
        let summary = serde_json::json!({
            "baseline_val_psnr": baseline.mean_psnr,
            "baseline_val_ssim": baseline.mean_ssim,
            "best_iteration": outcome.best_iteration,
            "best_val_psnr": outcome.best_val_psnr,
            "final_val_psnr": outcome.history.last().map(|r| r.val_psnr),
            "rejected_steps": outcome.rejected_steps,
        });
        write_file(&out.join("train_summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
        println!(
            "A*z baseline {:.3} dB; best validation {:.3} dB at iteration {}; models in {}",
            baseline.mean_psnr,
            outcome.best_val_psnr,
            outcome.best_iteration,
            out.display()
        );
        Ok(())
    })())
}

fn load_model(path: &Path) -> CmdResult<NetworkParams> {
    invalid(network::deserialize(path).with_context(|| format!("loading model {}", path.display())))
}

fn beta_label(b: f64) -> String {
    if b.fract() == 0.0 {
        format!("b{}", b as i64)
    } else {
        format!("b{b}")
    }
}

pub fn eval(ctx: &Session, model: &Path) -> CmdResult {
    let cfg = &ctx.config;
    let params = load_model(model)?;
    let prepared = prepare(cfg)?;
    if params.degradation != prepared.operator {
        return Err(Failure::Validation(anyhow!(
            "model was trained for {:?} on {}x{} images, but the config describes {:?} on {}x{} images",
            params.degradation.kind(),
            params.degradation.side(),
            params.degradation.side(),
            prepared.operator.kind(),
            prepared.operator.side(),
            prepared.operator.side()
        )));
    }
    let pairs = prepared.split(cfg.eval.split);
    if pairs.is_empty() {
        return Err(Failure::Validation(anyhow!("the {:?} split is empty", cfg.eval.split)));
    }
    runtime((|| {
        let net = evaluate(&params, &pairs)?;
        let base = evaluate_backprojection(&prepared.operator, &pairs)?;
        let mut csv = String::from("index,psnr,ssim,baseline_psnr,baseline_ssim\n");
        for (i, (s, b)) in net.scores.iter().zip(&base.scores).enumerate() {
            writeln!(csv, "{i},{},{:.6},{},{:.6}", format_psnr(s.psnr), s.ssim, format_psnr(b.psnr), b.ssim)?;
        }
        writeln!(
            csv,
            "mean,{},{:.6},{},{:.6}",
            format_psnr(net.mean_psnr),
            net.mean_ssim,
            format_psnr(base.mean_psnr),
            base.mean_ssim
        )?;
        let dir = cfg.output_dir.join("eval");
        write_file(&dir.join("metrics.csv"), csv)?;
        println!(
            "{} images: PSNR {} dB, SSIM {:.4} (A*z baseline {} dB, {:.4})",
            pairs.len(),
            format_psnr(net.mean_psnr),
            net.mean_ssim,
            format_psnr(base.mean_psnr),
            base.mean_ssim
        );
        if !cfg.eval.betas.is_empty() {
            let rows = robustness_eval(&params, &pairs, &cfg.eval.betas, cfg.seeds().noise)?;
            let levels = &rows[1..];
            let mut header = String::from("metric,b0");
            for r in levels {
                write!(header, ",{}", beta_label(r.beta))?;
            }
            for r in levels {
                write!(header, ",drop_{}", beta_label(r.beta))?;
            }
            let mut psnr_line = format!("psnr,{:.4}", rows[0].psnr);
            let mut ssim_line = format!("ssim,{:.4}", rows[0].ssim);
            for r in levels {
                write!(psnr_line, ",{:.4}", r.psnr)?;
                write!(ssim_line, ",{:.4}", r.ssim)?;
            }
            for r in levels {
                write!(psnr_line, ",{:.4}", r.psnr_drop)?;
                write!(ssim_line, ",{:.4}", r.ssim_drop)?;
            }
            let table = format!("{header}\n{psnr_line}\n{ssim_line}\n");
            print!("{table}");
            write_file(&dir.join("robustness.csv"), table)?;
        }
        Ok(())
    })())
}

pub fn solve(ctx: &Session) -> CmdResult {
    let cfg = &ctx.config;
    let s = &cfg.solve;
    let prepared = prepare(cfg)?;
    let mut pairs = prepared.split(s.split);
    if let Some(limit) = s.limit {
        pairs.truncate(limit);
    }
    if pairs.is_empty() {
        return Err(Failure::Validation(anyhow!("the {:?} split is empty", s.split)));
    }
    let a = &prepared.operator;
    let grid = Grid::square(a.side());
    let l = runtime(
        match s.regularizer {
            Regularizer::Identity => AnalysisOperator::scaled_identity(grid, s.lambda),
            Regularizer::Differences => AnalysisOperator::finite_differences(grid, s.lambda),
        }
        .map_err(Into::into),
    )?;
    let norm_a = a.norm();
    let norm_l = runtime(l.norm().map_err(Into::into))?;
    let tau = s.tau.unwrap_or(1.0 / (norm_a * norm_a));
    let sigma = s.sigma.unwrap_or(0.9 * (1.0 / tau - norm_a * norm_a / 2.0) / (norm_l * norm_l));
    let steps = invalid(StepSizes::new(tau, sigma).map_err(Into::into))?;
    let options = SolveOptions {
        stop: StopCriteria {
            tol: s.tol,
            max_iter: s.max_iter,
        },
        allow_unsafe_steps: false,
    };
    runtime((|| {
        let mut report = String::from("index,iterations,converged,final_residual,objective,psnr,ssim\n");
        let mut traces = String::from("index,iteration,objective\n");
        let mut restored = Vec::with_capacity(pairs.len());
        let mut unconverged = 0;
        for (i, p) in pairs.iter().enumerate() {
            let r = pdhg_solve(a, &l, p.degraded.values(), steps, options)?;
            let sc = score(&r.x_hat, p.clean.pixels())?;
            let obj = objective(a, &l, p.degraded.values(), &r.x_hat);
            if !r.converged {
                unconverged += 1;
                eprintln!("image {i}: not converged after {} iterations (residual {:e})", r.iterations, r.final_residual);
            }
            writeln!(
                report,
                "{i},{},{},{:e},{:.17e},{},{:.6}",
                r.iterations,
                r.converged,
                r.final_residual,
                obj,
                format_psnr(sc.psnr),
                sc.ssim
            )?;
            for (t, v) in r.objective_trace.iter().enumerate() {
                writeln!(traces, "{i},{},{v:.17e}", t + 1)?;
            }
            restored.push(r.x_hat);
        }
        let dir = cfg.output_dir.join("solve");
        snapshot(cfg)?;
        write_file(&dir.join("report.csv"), report)?;
        write_file(&dir.join("traces.csv"), traces)?;
        let views: Vec<&[f64]> = restored.iter().map(Vec::as_slice).collect();
        write_file(&dir.join("restored.idx"), encode_idx_f64(&views)?)?;
        println!(
            "solved {} images (tau {tau:.6}, sigma {sigma:.6}); {unconverged} did not converge",
            pairs.len()
        );
        Ok(())
    })())
}

pub fn run_gradcheck(cfg: &RunConfig, flip_output_sign: bool) -> CmdResult {
    let g = &cfg.gradcheck;
    if g.side * g.side > 64 {
        return Err(Failure::Validation(anyhow!(
            "gradcheck instances are limited to N <= 64 (side {} gives {})",
            g.side,
            g.side * g.side
        )));
    }
    let spec = InstanceSpec {
        layers: g.layers,
        side: g.side,
        rows: g.rows,
        block_sparse: g.block_sparse,
        blur: g.blur,
        samples: g.samples,
    };
    let inst = invalid(Instance::random(&spec, cfg.seed).map_err(Into::into))?;
    let options = GradcheckOptions {
        epsilon: g.epsilon,
        rel_tol: g.rel_tol,
        abs_floor: g.abs_floor,
        backward: pdnet_core::backprop::BackwardOptions { flip_output_sign },
    };
    let report = runtime(gradcheck(&inst.params, &inst.batch, &options).map_err(Into::into))?;
    let mut table = String::from("layer,group,max_rel_error,note\n");
    let n = g.side * g.side;
    for k in 0..inst.params.depth() {
        let l = &inst.params.layers[k].analysis;
        let masked = l.rows() * n - l.nnz();
        let sigma_note = if report.structural_zeros[k] { "exact zero" } else { "" };
        table += &format!("{},tau,{:e},\n", k + 1, report.errors.tau[k]);
        table += &format!("{},sigma,{:e},{sigma_note}\n", k + 1, report.errors.sigma[k]);
        table += &format!("{},L,{:e},{masked} masked entries are exact zeros\n", k + 1, report.errors.analysis[k]);
    }
    print!("{table}");
    runtime(write_file(&cfg.output_dir.join("gradcheck.csv"), &table))?;
    if report.passed() {
        println!("gradcheck passed (max relative error {:e})", report.errors.max());
        Ok(())
    } else {
        Err(Failure::Gradcheck(format!(
            "max relative error {:e} exceeds {:e}",
            report.errors.max(),
            report.rel_tol
        )))
    }
}

pub fn export_filters(cfg: &RunConfig, model: &Path, layer: Option<usize>) -> CmdResult {
    let params = load_model(model)?;
    let layer = layer.unwrap_or(params.depth());
    if layer == 0 || layer > params.depth() {
        return Err(Failure::Validation(anyhow!("layer {layer} is out of range 1..={}", params.depth())));
    }
    let written = runtime(export_grids(&params, layer, &cfg.output_dir.join("filters")))?;
    if written.is_empty() {
        return Err(Failure::Validation(anyhow!("layer {layer} has no dense or block-sparse parts")));
    }
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

/// Default model location inside the output directory.
pub fn default_model(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join("model_best.json")
}

pub fn ensure_model(path: &Path) -> CmdResult {
    if !path.exists() {
        return Err(Failure::Validation(anyhow!("model file {} does not exist", path.display())));
    }
    Ok(())
}
