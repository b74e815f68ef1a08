//! Model checkpoints: learned transform unions, network weights and whole
//! pipelines. Matrix payloads are raw little-endian f64 so checkpoints
//! round-trip bit-exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::raster::{read_raster_f64, write_raster_f64};
use crate::ct::{FanBeamGeometry, ImageGrid};
use crate::error::{CoreError, Result};
use crate::neural::{ConvLayer, ConvNetParams};
use crate::pipeline::{SerialPipeline, SuperBlock, SuperPipeline, TrainingLog, UnsupParams};
use crate::ultra::TransformUnion;

#[derive(Debug, Serialize, Deserialize)]
struct UnionHeader {
    k: usize,
    m: usize,
    lambda0: f64,
    eta: f64,
    training_log: Vec<f64>,
}

/// Writes `<base>.meta.json` (header) plus `<base>.{json,f64}` (stacked
/// transform matrices).
pub fn save_transform_union(base: &Path, union: &TransformUnion) -> Result<()> {
    let m = union.patch_dim();
    let header = UnionHeader {
        k: union.k(),
        m,
        lambda0: union.lambda0,
        eta: union.eta,
        training_log: union.training_log.clone(),
    };
    let mut data = Vec::with_capacity(union.k() * m * m);
    for t in &union.transforms {
        data.extend(t.iter().copied());
    }
    write_raster_f64(base, &data, &[union.k(), m, m], "transform", "")?;
    fs::write(
        meta_path(base),
        serde_json::to_string_pretty(&header)?,
    )?;
    Ok(())
}

pub fn load_transform_union(base: &Path) -> Result<TransformUnion> {
    let header: UnionHeader = serde_json::from_str(&fs::read_to_string(meta_path(base))?)?;
    let (meta, data) = read_raster_f64(base)?;
    if meta.dims != [header.k, header.m, header.m] {
        return Err(CoreError::CorruptArtifact {
            path: base.display().to_string(),
            reason: "transform payload dims disagree with header".into(),
        });
    }
    let mm = header.m * header.m;
    let transforms = (0..header.k)
        .map(|k| {
            ndarray::Array2::from_shape_vec(
                (header.m, header.m),
                data[k * mm..(k + 1) * mm].to_vec(),
            )
            .expect("dims checked")
        })
        .collect();
    let union = TransformUnion {
        transforms,
        lambda0: header.lambda0,
        eta: header.eta,
        training_log: header.training_log,
    };
    union.validate()?;
    Ok(union)
}

fn meta_path(base: &Path) -> std::path::PathBuf {
    let mut name = base.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    base.with_file_name(name)
}

#[derive(Debug, Serialize, Deserialize)]
struct NetHeader {
    shapes: Vec<(usize, usize, usize, usize)>,
    io_scale: f64,
    init_seed: u64,
}

/// Writes a network as `<base>.meta.json` plus a raw f64 raster holding all
/// weights and biases in layer order.
pub fn save_convnet(base: &Path, params: &ConvNetParams) -> Result<()> {
    params.validate()?;
    let header = NetHeader {
        shapes: params.layers.iter().map(|l| l.weight.dim()).collect(),
        io_scale: params.io_scale,
        init_seed: params.init_seed,
    };
    let mut data = Vec::with_capacity(params.n_weights());
    for l in &params.layers {
        data.extend(l.weight.iter().copied());
        data.extend(l.bias.iter().copied());
    }
    write_raster_f64(base, &data, &[data.len()], "network", "")?;
    fs::write(meta_path(base), serde_json::to_string_pretty(&header)?)?;
    Ok(())
}

pub fn load_convnet(base: &Path) -> Result<ConvNetParams> {
    let header: NetHeader = serde_json::from_str(&fs::read_to_string(meta_path(base))?)?;
    let (_, data) = read_raster_f64(base)?;
    let mut offset = 0usize;
    let mut layers = Vec::with_capacity(header.shapes.len());
    for &(co, ci, kh, kw) in &header.shapes {
        let w_len = co * ci * kh * kw;
        if offset + w_len + co > data.len() {
            return Err(CoreError::CorruptArtifact {
                path: base.display().to_string(),
                reason: "network payload shorter than header shapes imply".into(),
            });
        }
        let weight = ndarray::Array4::from_shape_vec(
            (co, ci, kh, kw),
            data[offset..offset + w_len].to_vec(),
        )
        .expect("shape product checked");
        offset += w_len;
        let bias = ndarray::Array1::from_vec(data[offset..offset + co].to_vec());
        offset += co;
        layers.push(ConvLayer { weight, bias });
    }
    let params = ConvNetParams {
        layers,
        io_scale: header.io_scale,
        init_seed: header.init_seed,
    };
    params.validate()?;
    Ok(params)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum UnsupFile {
    /// Scalar solver settings; the transform union lives in `union.*`.
    Ultra {
        gamma: f64,
        beta: f64,
        mu: f64,
        outer: usize,
        inner: usize,
        patch: crate::ultra::PatchConfig,
        nonneg: bool,
        inner_tol: f64,
    },
    PnpAdmm(crate::mbir::AdmmParams),
}

#[derive(Debug, Serialize, Deserialize)]
struct PipelineFile {
    lambda_lb: f64,
    lambda_ub: f64,
    geometry: FanBeamGeometry,
    grid: ImageGrid,
    geometry_hash: String,
    unsup: UnsupFile,
    lambdas: Vec<f64>,
    training_log: TrainingLog,
}

/// Pipeline checkpoint directory: `pipeline.json`, `union.*` when the solver
/// is transform-based, and one `blockNN/` per block with the network
/// checkpoint and a small JSON carrying its combination weight and log.
pub fn save_pipeline(dir: &Path, pipeline: &SuperPipeline) -> Result<()> {
    fs::create_dir_all(dir)?;
    let unsup = match &pipeline.unsup {
        UnsupParams::Ultra(p) => {
            save_transform_union(&dir.join("union"), &p.union)?;
            UnsupFile::Ultra {
                gamma: p.gamma,
                beta: p.beta,
                mu: p.mu,
                outer: p.outer,
                inner: p.inner,
                patch: p.patch,
                nonneg: p.nonneg,
                inner_tol: p.inner_tol,
            }
        }
        UnsupParams::PnpAdmm(p) => UnsupFile::PnpAdmm(p.clone()),
    };
    let file = PipelineFile {
        lambda_lb: pipeline.lambda_lb,
        lambda_ub: pipeline.lambda_ub,
        geometry: pipeline.geometry,
        grid: pipeline.grid,
        geometry_hash: super::geometry_hash(&pipeline.geometry, &pipeline.grid),
        unsup,
        lambdas: pipeline.blocks.iter().map(|b| b.lambda).collect(),
        training_log: pipeline.training_log.clone(),
    };
    fs::write(dir.join("pipeline.json"), serde_json::to_string_pretty(&file)?)?;
    for (i, block) in pipeline.blocks.iter().enumerate() {
        let bdir = dir.join(format!("block{:02}", i + 1));
        fs::create_dir_all(&bdir)?;
        save_convnet(&bdir.join("network"), &block.theta)?;
        fs::write(
            bdir.join("block.json"),
            serde_json::to_string_pretty(&serde_json::json!({
                "block": i + 1,
                "lambda": block.lambda,
            }))?,
        )?;
    }
    Ok(())
}

pub fn load_pipeline(dir: &Path) -> Result<SuperPipeline> {
    let file: PipelineFile =
        serde_json::from_str(&fs::read_to_string(dir.join("pipeline.json"))?)?;
    let unsup = match file.unsup {
        UnsupFile::Ultra {
            gamma,
            beta,
            mu,
            outer,
            inner,
            patch,
            nonneg,
            inner_tol,
        } => UnsupParams::Ultra(crate::mbir::UltraReconParams {
            union: load_transform_union(&dir.join("union"))?,
            gamma,
            beta,
            mu,
            outer,
            inner,
            patch,
            nonneg,
            inner_tol,
        }),
        UnsupFile::PnpAdmm(p) => UnsupParams::PnpAdmm(p),
    };
    let mut blocks = Vec::with_capacity(file.lambdas.len());
    for (i, lambda) in file.lambdas.iter().enumerate() {
        let bdir = dir.join(format!("block{:02}", i + 1));
        blocks.push(SuperBlock {
            theta: load_convnet(&bdir.join("network"))?,
            lambda: *lambda,
        });
    }
    Ok(SuperPipeline {
        blocks,
        lambda_lb: file.lambda_lb,
        lambda_ub: file.lambda_ub,
        unsup,
        geometry: file.geometry,
        grid: file.grid,
        training_log: file.training_log,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct SerialFile {
    geometry: FanBeamGeometry,
    grid: ImageGrid,
    geometry_hash: String,
    unsup: UnsupFile,
    n_blocks: usize,
    training_log: TrainingLog,
}

pub fn save_serial_pipeline(dir: &Path, pipeline: &SerialPipeline) -> Result<()> {
    fs::create_dir_all(dir)?;
    let unsup = match &pipeline.unsup {
        UnsupParams::Ultra(p) => {
            save_transform_union(&dir.join("union"), &p.union)?;
            UnsupFile::Ultra {
                gamma: p.gamma,
                beta: p.beta,
                mu: p.mu,
                outer: p.outer,
                inner: p.inner,
                patch: p.patch,
                nonneg: p.nonneg,
                inner_tol: p.inner_tol,
            }
        }
        UnsupParams::PnpAdmm(p) => UnsupFile::PnpAdmm(p.clone()),
    };
    let file = SerialFile {
        geometry: pipeline.geometry,
        grid: pipeline.grid,
        geometry_hash: super::geometry_hash(&pipeline.geometry, &pipeline.grid),
        unsup,
        n_blocks: pipeline.blocks.len(),
        training_log: pipeline.training_log.clone(),
    };
    fs::write(dir.join("serial.json"), serde_json::to_string_pretty(&file)?)?;
    for (i, theta) in pipeline.blocks.iter().enumerate() {
        let bdir = dir.join(format!("block{:02}", i + 1));
        fs::create_dir_all(&bdir)?;
        save_convnet(&bdir.join("network"), theta)?;
    }
    Ok(())
}

pub fn load_serial_pipeline(dir: &Path) -> Result<SerialPipeline> {
    let file: SerialFile = serde_json::from_str(&fs::read_to_string(dir.join("serial.json"))?)?;
    let unsup = match file.unsup {
        UnsupFile::Ultra {
            gamma,
            beta,
            mu,
            outer,
            inner,
            patch,
            nonneg,
            inner_tol,
        } => UnsupParams::Ultra(crate::mbir::UltraReconParams {
            union: load_transform_union(&dir.join("union"))?,
            gamma,
            beta,
            mu,
            outer,
            inner,
            patch,
            nonneg,
            inner_tol,
        }),
        UnsupFile::PnpAdmm(p) => UnsupParams::PnpAdmm(p),
    };
    let mut blocks = Vec::with_capacity(file.n_blocks);
    for i in 1..=file.n_blocks {
        blocks.push(load_convnet(&dir.join(format!("block{i:02}")).join("network"))?);
    }
    Ok(SerialPipeline {
        blocks,
        unsup,
        geometry: file.geometry,
        grid: file.grid,
        training_log: file.training_log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::ConvNetParams;

    #[test]
    fn convnet_roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let params = ConvNetParams::small_resnet(42, (0.005f64).sqrt());
        let base = dir.path().join("net");
        save_convnet(&base, &params).unwrap();
        let back = load_convnet(&base).unwrap();
        assert_eq!(params, back);
    }
}
