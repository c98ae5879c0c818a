use std::io::{self, BufWriter};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::json;
use shapkan::attribution::{vanilla_scores, CoalitionGame, ValueFunctionSpec};
use shapkan::bench::{bench_sv as run_bench, BenchConfig};
use shapkan::datasets::{self, Dataset, DatasetManifest, SampleSpec};
use shapkan::pruning::{shapkan_prune, vanilla_prune, PruneCriterion, SvConfig};
use shapkan::symbolic::{snap_network, AutoChooser, FitChooser, Primitive, PrimitiveLibrary};
use shapkan::training::{init_network, rmse, GridSpec, TrainConfig, Trainer, Validation};
use shapkan::KanNetwork;

use crate::interactive::Prompt;
use crate::manifest::{sibling, Run};
use crate::{BenchArgs, GenDataArgs, PruneArgs, PruneMethodArg, ScoreArgs, ScoreMethod, SymbolifyArgs, TrainArgs};

fn load_data(path: &Path) -> Result<Dataset> {
    datasets::load_csv(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn load_model(path: &Path) -> Result<KanNetwork> {
    KanNetwork::load(path).with_context(|| format!("reading model {}", path.display()))
}

pub fn gen_data(args: &GenDataArgs) -> Result<()> {
    let spec = SampleSpec::new(args.n, args.range[0], args.range[1], args.seed);
    spec.validate()?;
    let mut run = Run::start("gen-data", &DatasetManifest::new(args.task, &spec), Some(args.seed), &args.out)?;
    let data = datasets::generate(args.task, &spec)?;
    datasets::save_csv(&data, &args.out)?;
    run.record(&args.out);
    run.finish(json!({ "rows": data.len(), "input_dim": data.input_dim() }))
}

fn train_config(args: &TrainArgs, preset_lambda: Option<f64>) -> TrainConfig {
    TrainConfig {
        steps: args.steps,
        learning_rate: args.lr,
        lambda: args.lambda.or(preset_lambda).unwrap_or(0.0),
        mu1: args.mu1,
        mu2: args.mu2,
        batch_size: args.batch_size,
        seed: args.seed,
    }
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let data = load_data(&args.data)?;
    let preset = args.preset.map(|t| t.preset());
    let net = match &args.init_model {
        Some(path) => load_model(path)?,
        None => {
            let widths = match (&args.widths, &preset) {
                (Some(w), _) => w.clone(),
                (None, Some(p)) => p.widths.clone(),
                (None, None) => bail!(shapkan::KanError::InvalidArgument(
                    "one of --widths, --preset or --init-model is required".into()
                )),
            };
            let domain = match &args.domain {
                Some(d) => (d[0], d[1]),
                None => (-1.0, 1.0),
            };
            let grid = GridSpec {
                degree: args.degree.or(preset.as_ref().map(|p| p.degree)).unwrap_or(3),
                intervals: args.grid.or(preset.as_ref().map(|p| p.grid_intervals)).unwrap_or(3),
                domain,
            };
            init_network(&widths, &grid, args.seed)?
        }
    };
    let config = train_config(args, preset.as_ref().map(|p| p.lambda));
    let mut run = Run::start("train", &json!({ "args": args, "train": &config }), Some(args.seed), &args.out)?;

    let targets = data.target_matrix();
    let val = args.val_data.as_deref().map(load_data).transpose()?;
    let val_targets = val.as_ref().map(Dataset::target_matrix);
    let mut trainer = Trainer::new(config);
    if let (Some(v), Some(t)) = (&val, &val_targets) {
        trainer = trainer.with_validation(Validation {
            inputs: &v.inputs,
            targets: t,
            every: args.val_every,
        });
    }
    let outcome = trainer.run(&net, &data.inputs, &targets)?;
    outcome.net.save(&args.out)?;
    run.record(&args.out);
    let history_path = sibling(&args.out, ".history.csv");
    outcome.write_history_csv(BufWriter::new(
        std::fs::File::create(&history_path).with_context(|| format!("writing {}", history_path.display()))?,
    ))?;
    run.record(history_path);

    let train_rmse = rmse(&outcome.net, &data.inputs, &targets)?;
    let final_loss = outcome.final_loss();
    eprintln!("train rmse {train_rmse:.6e}, final loss {:.6e}", final_loss.total);
    run.finish(json!({
        "widths": outcome.net.widths(),
        "train_rmse": train_rmse,
        "final_loss": final_loss,
        "validation_rmse_at_best_step": outcome.validation_at_best_step(),
    }))
}

fn scored_layers(net: &KanNetwork, layer: Option<usize>) -> Result<Vec<usize>> {
    match layer {
        Some(l) if net.hidden_layers().contains(&l) => Ok(vec![l]),
        Some(l) => bail!(shapkan::KanError::InvalidLayer {
            layer: l,
            reason: format!("hidden layers are {:?}", net.hidden_layers()),
        }),
        None if net.hidden_layers().is_empty() => {
            bail!(shapkan::KanError::InvalidArgument("network has no hidden layer".into()))
        }
        None => Ok(net.hidden_layers().collect()),
    }
}

pub fn score(args: &ScoreArgs) -> Result<()> {
    let net = load_model(&args.model)?;
    let data = load_data(&args.data)?;
    let layers = scored_layers(&net, args.layer)?;
    let mut run = Run::start("score", args, Some(args.seed), &args.out)?;
    let vanilla = match args.method {
        ScoreMethod::Vanilla => {
            let (_, cache) = net.forward(&data.inputs)?;
            Some(vanilla_scores(&net, &cache)?)
        }
        _ => None,
    };
    let mut summary = Vec::new();
    for l in layers {
        let report = match (&vanilla, args.method) {
            (Some(scores), _) => scores[l - 1].combined(),
            (None, method) => {
                let game = CoalitionGame::new(&net, &ValueFunctionSpec::new(l, data.inputs.clone()))?;
                match method {
                    ScoreMethod::ShapExact => game.exact()?,
                    ScoreMethod::ShapPerm => game.permutation(args.sampling.m, args.seed)?,
                    ScoreMethod::ShapAnti => game.antithetic(args.sampling.m, args.seed)?,
                    _ => game.adaptive(args.sampling.epsilon, args.sampling.m_max, args.seed)?,
                }
            }
        };
        let json_path = sibling(&args.out, &format!(".layer{l}.json"));
        run.write_text(json_path, &report.to_json()?)?;
        let csv_path = sibling(&args.out, &format!(".layer{l}.csv"));
        report.write_csv(BufWriter::new(std::fs::File::create(&csv_path)?))?;
        run.record(csv_path);
        if let Some(scores) = &vanilla {
            let path = sibling(&args.out, &format!(".layer{l}.vanilla.json"));
            run.write_text(path, &serde_json::to_string_pretty(&scores[l - 1])?)?;
        }
        println!("layer {l}: ranking {:?}", report.ranking());
        summary.push(json!({ "layer": l, "ranking": report.ranking(), "top2": report.top(2) }));
    }
    run.finish(json!(summary))
}

fn criterion(args: &PruneArgs) -> PruneCriterion {
    let c = &args.criterion;
    match (c.number, c.ratio, c.threshold) {
        (Some(k), _, _) => PruneCriterion::number(k),
        (_, Some(eta), _) => PruneCriterion::ratio(eta),
        (_, _, Some(tau)) => PruneCriterion::threshold(tau),
        _ => unreachable!("clap requires exactly one criterion"),
    }
}

pub fn prune(args: &PruneArgs) -> Result<()> {
    let net = load_model(&args.model)?;
    let data = load_data(&args.data)?;
    let criterion = criterion(args);
    let mut run = Run::start("prune", args, Some(args.seed), &args.out)?;
    let outcome = match args.method {
        PruneMethodArg::Shapkan => shapkan_prune(
            &net,
            &data.inputs,
            &criterion,
            &SvConfig {
                epsilon: args.epsilon,
                m_max: args.m_max,
                seed: args.seed,
            },
        )?,
        PruneMethodArg::Vanilla => vanilla_prune(&net, &data.inputs, &criterion)?,
    };
    outcome.net.save(&args.out)?;
    run.record(&args.out);
    run.write_text(sibling(&args.out, ".plan.json"), &outcome.plan.to_json()?)?;
    println!("widths {:?} -> {:?}", outcome.plan.widths_before, outcome.plan.widths_after);
    run.finish(json!({
        "widths_before": outcome.plan.widths_before,
        "widths_after": outcome.plan.widths_after,
        "removed": outcome.plan.layers.iter().map(|l| json!({ "layer": l.layer_index, "nodes": l.removed })).collect::<Vec<_>>(),
    }))
}

pub fn symbolify(args: &SymbolifyArgs) -> Result<()> {
    let net = load_model(&args.model)?;
    let data = load_data(&args.data)?;
    let library = match &args.library {
        Some(names) => PrimitiveLibrary::new(
            names
                .iter()
                .map(|n| n.trim().parse::<Primitive>())
                .collect::<shapkan::Result<Vec<_>>>()?,
        )?,
        None => PrimitiveLibrary::default(),
    };
    let mut run = Run::start("symbolify", args, None, &args.out)?;
    let model = if args.interactive {
        let stdin = io::stdin();
        let mut prompt = Prompt::new(stdin.lock(), io::stdout());
        snap_network(&net, &data.inputs, &library, &mut prompt as &mut dyn FitChooser)?
    } else {
        snap_network(&net, &data.inputs, &library, &mut AutoChooser)?
    };
    let text: String = model
        .formulas()
        .iter()
        .enumerate()
        .map(|(j, f)| format!("y{} = {f}\n", j + 1))
        .collect();
    print!("{text}");
    println!("r2_global = {:.6}", model.r2_global);
    for w in &model.warnings {
        eprintln!("warning: {w}");
    }
    run.write_text(args.out.clone(), &text)?;
    let table = sibling(&args.out, ".fits.csv");
    model.save_fit_table(&table)?;
    run.record(table);
    run.write_text(sibling(&args.out, ".expr.json"), &model.to_json()?)?;
    run.finish(json!({ "r2_global": model.r2_global, "warnings": model.warnings }))
}

pub fn bench_sv(args: &BenchArgs) -> Result<()> {
    let net = load_model(&args.model)?;
    let data = load_data(&args.data)?;
    let config = BenchConfig {
        layer_index: args.layer,
        sizes: args.sizes.clone(),
        repeats: args.repeats,
        antithetic: args.antithetic,
        seed: args.seed,
    };
    let mut run = Run::start("bench-sv", args, Some(args.seed), &args.out)?;
    let result = run_bench(&net, &data.inputs, &config)?;
    result.write_csv(BufWriter::new(
        std::fs::File::create(&args.out).with_context(|| format!("writing {}", args.out.display()))?,
    ))?;
    run.record(&args.out);
    let mut methods = vec![shapkan::attribution::Method::Permutation];
    if args.antithetic {
        methods.push(shapkan::attribution::Method::Antithetic);
    }
    let medians: Vec<_> = methods
        .iter()
        .flat_map(|&method| {
            let result = &result;
            args.sizes.iter().map(move |&m| {
                json!({
                    "method": method,
                    "m": m,
                    "median_l2_bias": result.median_bias(method, m),
                    "median_wall_seconds": result.median_seconds(method, m),
                })
            })
        })
        .collect();
    run.finish(json!({ "exact": result.exact.shapley, "medians": medians }))
}
