use std::fs;
use std::path::Path;

use kvnet::fourier::{ifft2c, ComplexImage};
use kvnet::io::{export_slices, read_ksp, read_mask, write_csv, write_ksp, write_mask, MetricRow};
use kvnet::metrics::{slice_metrics, MetricReport};
use kvnet::models::count::{self, Arch, Include, Size};
use kvnet::models::KvNet;
use kvnet::sampling::{apply_mask, generate_random_mask, zero_fill, Mask};
use kvnet::training::{
    evaluate, make_phantom_dataset, prepare_slice, read_checkpoint, PhantomSpec, PreparedSlice, Reconstructor,
    RunConfig, Trainer,
};
use kvnet::{Error, Result};

use crate::Command;

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Phantom { n, size, seed, out } => phantom(n, size, seed, &out),
        Command::Mask {
            p,
            accel,
            center_frac,
            seed,
            out,
        } => mask(p, accel, center_frac, seed, &out),
        Command::Zerofill { ksp, mask, out_pgm, csv } => zerofill(&ksp, &mask, &out_pgm, csv.as_deref()),
        Command::Train {
            train,
            val,
            config,
            out,
            resume,
        } => train_cmd(&train, &val, &config, &out, resume),
        Command::Eval {
            ckpt,
            data,
            mask,
            csv,
            out_pgm,
        } => eval(&ckpt, &data, &mask, &csv, out_pgm.as_deref()),
        Command::Params {
            arch,
            c,
            levels,
            blocks,
            ck,
        } => params(&arch, c, levels, blocks, ck),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn phantom(n: usize, size: usize, seed: u64, out: &Path) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("--n must be at least 1".into()));
    }
    let samples = make_phantom_dataset(&PhantomSpec::new(size, seed), n)?;
    let kspaces: Vec<_> = samples.into_iter().map(|s| s.kspace).collect();
    write_ksp(out, &kspaces)?;
    println!("wrote {n} slices of {size}x{size} to {}", out.display());
    Ok(())
}

fn mask(p: usize, accel: f64, center_frac: f64, seed: u64, out: &Path) -> Result<()> {
    let m = generate_random_mask(p, center_frac, accel, seed)?;
    if let Some(w) = &m.warning {
        eprintln!("warning: {w}");
    }
    write_mask(out, &m)?;
    println!(
        "wrote mask with {} of {p} columns sampled to {}",
        m.sampled_count(),
        out.display()
    );
    Ok(())
}

fn check_mask_width(kspaces: &[ComplexImage<f32>], mask: &Mask) -> Result<()> {
    match kspaces.iter().find(|k| k.width() != mask.len()) {
        Some(k) => Err(Error::Shape {
            op: "mask",
            operand: "mask",
            expected: format!("length {}", k.width()),
            got: vec![mask.len()],
        }),
        None => Ok(()),
    }
}

fn zerofill(ksp: &Path, mask_path: &Path, out_pgm: &Path, csv: Option<&Path>) -> Result<()> {
    let kspaces = read_ksp(ksp)?;
    let m = read_mask(mask_path)?;
    check_mask_width(&kspaces, &m)?;
    let mut images = Vec::with_capacity(kspaces.len());
    let mut metrics = Vec::with_capacity(kspaces.len());
    for k in &kspaces {
        let zf = zero_fill(&apply_mask(k, &m)?).magnitude();
        if csv.is_some() {
            let truth = ifft2c(k).magnitude();
            metrics.push(slice_metrics(&zf, &truth, k.height(), k.width())?);
        }
        images.push(zf);
    }
    create_dir(out_pgm)?;
    let (h, w) = (kspaces[0].height(), kspaces[0].width());
    let paths = export_slices(out_pgm, &images, h, w)?;
    println!("wrote {} PGM slices to {}", paths.len(), out_pgm.display());
    if let Some(path) = csv {
        let r = MetricReport::from_slices(&metrics)?;
        write_csv(path, &[report_row(0, "zerofill", &r)])?;
        print_report("zerofill", &r);
    }
    Ok(())
}

fn report_row(epoch: usize, split: &str, r: &MetricReport) -> MetricRow {
    MetricRow {
        epoch,
        split: split.into(),
        nmse: r.nmse,
        psnr: r.psnr,
        ssim: r.ssim,
        loss: 1.0 - r.ssim,
    }
}

fn print_report(label: &str, r: &MetricReport) {
    println!(
        "{label}: ssim={:.4} psnr={:.2} nmse={:.5} slices={}",
        r.ssim, r.psnr, r.nmse, r.n_slices
    );
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn train_cmd(train: &Path, val: &Path, config: &Path, out: &Path, resume: bool) -> Result<()> {
    let cfg = RunConfig::from_json(&read_text(config)?).map_err(|e| match e {
        Error::Json(j) => Error::Format {
            path: config.to_path_buf(),
            reason: j.to_string(),
        },
        other => other,
    })?;
    let train_k = read_ksp(train)?;
    let val_k = read_ksp(val)?;
    create_dir(out)?;
    let last = out.join("last.ckpt");
    let mut trainer = if resume && last.exists() {
        let ckpt = read_checkpoint(&last)?;
        if ckpt.config != cfg.model {
            return Err(Error::InvalidArgument(format!(
                "{} was trained with a different model config",
                last.display()
            )));
        }
        println!("resuming after epoch {}", ckpt.epoch);
        Trainer::from_checkpoint(ckpt, cfg.train)?
    } else {
        Trainer::new(cfg.model, cfg.train)?
    };
    let summary = trainer.fit(&train_k, &val_k, Some(out), |rows| {
        for r in rows {
            println!(
                "epoch {:>3} {:<5} loss={:.4} ssim={:.4} psnr={:.2} nmse={:.5}",
                r.epoch, r.split, r.loss, r.ssim, r.psnr, r.nmse
            );
        }
    })?;
    print_report("zerofill", &summary.zero_fill);
    print_report("final val", &summary.final_val);
    println!("best val ssim={:.4}; outputs in {}", summary.best_val_ssim, out.display());
    Ok(())
}

fn eval(ckpt_path: &Path, data: &Path, mask_path: &Path, csv: &Path, out_pgm: Option<&Path>) -> Result<()> {
    let ckpt = read_checkpoint(ckpt_path)?;
    let kspaces = read_ksp(data)?;
    let m = read_mask(mask_path)?;
    check_mask_width(&kspaces, &m)?;
    let slices: Vec<PreparedSlice<f32>> = kspaces
        .iter()
        .map(|k| prepare_slice(k, m.clone()))
        .collect::<Result<_>>()?;
    let net = KvNet::new(ckpt.config.clone())?;
    let model = evaluate(
        Reconstructor::Model {
            net: &net,
            params: &ckpt.params,
        },
        &slices,
        4,
    )?;
    let zf = evaluate(Reconstructor::ZeroFill, &slices, 4)?;
    write_csv(
        csv,
        &[report_row(ckpt.epoch, "eval", &model), report_row(ckpt.epoch, "zerofill", &zf)],
    )?;
    print_report("model", &model);
    print_report("zerofill", &zf);
    if let Some(dir) = out_pgm {
        let images = slices
            .iter()
            .map(|s| {
                let out = net.reconstruct(&ckpt.params, &s.k_masked, &s.mask)?;
                Ok(out.into_iter().map(|v| v * s.scale).collect())
            })
            .collect::<Result<Vec<Vec<f32>>>>()?;
        create_dir(dir)?;
        export_slices(dir, &images, slices[0].height(), slices[0].width())?;
        println!("wrote {} PGM slices to {}", images.len(), dir.display());
    }
    Ok(())
}

fn params(arch: &str, c: usize, levels: usize, blocks: usize, c_k: usize) -> Result<()> {
    let arch: Arch = arch.parse()?;
    if c == 0 || levels == 0 || blocks == 0 || c_k == 0 {
        return Err(Error::InvalidArgument("--c, --L, --T and --ck must be positive".into()));
    }
    let size = Size { c, levels, c_k, blocks };
    let closed = count::closed_form(arch, size);
    let store = count::instantiate(arch, size)?;
    let conv = count::instantiated(&store, Include::ConvOnly);
    let all = count::instantiated(&store, Include::All);
    println!("closed_form={closed}");
    println!("instantiated_conv={conv}");
    println!("instantiated_all={all}");
    println!("match={}", closed == conv);
    println!("r={:.4}", count::ratio(c, levels));
    Ok(())
}
