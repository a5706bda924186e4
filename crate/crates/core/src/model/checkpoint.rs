//! Model parameters inside a [`TensorFile`]: config echo in the metadata
//! under `<prefix>.` keys, tensors named `<prefix>.<param>`.

use crate::error::{Error, Result};
use crate::tensor_io::{Tensor, TensorFile};

use super::network::{CmnParameters, ModelConfig, Variant};

fn join<T: ToString>(xs: impl IntoIterator<Item = T>) -> String {
    xs.into_iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

pub fn write_model(file: &mut TensorFile, prefix: &str, p: &CmnParameters) {
    let c = &p.config;
    let key = |k: &str| format!("{prefix}.{k}");
    file.set_meta(key("variant"), c.variant.name());
    file.set_meta(key("n_frames"), c.n_frames);
    file.set_meta(key("n_mels"), c.n_mels);
    file.set_meta(key("filters"), join(&c.filters));
    file.set_meta(
        key("pools"),
        join(c.pools.iter().map(|(a, b)| format!("{a}x{b}"))),
    );
    file.set_meta(key("layers"), c.layers);
    file.set_meta(key("heads"), c.heads);
    file.set_meta(key("n_classes"), c.n_classes);
    file.set_meta(key("positional_encoding"), c.positional_encoding);
    file.set_meta(key("half_step"), c.half_step);
    for t in p.tensors() {
        file.push(Tensor {
            name: format!("{prefix}.{}", t.name),
            shape: t.shape,
            data: t.data.into_owned(),
        });
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse()
                .map_err(|_| Error::Format(format!("bad {what} entry `{x}`")))
        })
        .collect()
}

pub fn parse_pools(s: &str) -> Result<Vec<(usize, usize)>> {
    s.split(',')
        .map(|x| {
            let (a, b) = x
                .trim()
                .split_once('x')
                .ok_or_else(|| Error::config(format!("pool `{x}` is not of the form TxF")))?;
            let num = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| Error::config(format!("bad pool factor `{v}`")))
            };
            Ok((num(a)?, num(b)?))
        })
        .collect()
}

pub fn read_model_config(file: &TensorFile, prefix: &str) -> Result<ModelConfig> {
    let key = |k: &str| format!("{prefix}.{k}");
    Ok(ModelConfig {
        variant: Variant::parse(file.meta(&key("variant"))?)?,
        n_frames: file.meta_parse(&key("n_frames"))?,
        n_mels: file.meta_parse(&key("n_mels"))?,
        filters: parse_list(file.meta(&key("filters"))?, "filter")?,
        pools: parse_pools(file.meta(&key("pools"))?)?,
        layers: file.meta_parse(&key("layers"))?,
        heads: file.meta_parse(&key("heads"))?,
        n_classes: file.meta_parse(&key("n_classes"))?,
        positional_encoding: file.meta_parse(&key("positional_encoding"))?,
        half_step: file.meta_parse(&key("half_step"))?,
    })
}

pub fn read_model(file: &TensorFile, prefix: &str) -> Result<CmnParameters> {
    let config = read_model_config(file, prefix)?;
    let mut p = CmnParameters::zeros(&config)?;
    let names: Vec<(String, Vec<usize>)> =
        p.tensors().into_iter().map(|t| (t.name, t.shape)).collect();
    for ((name, shape), dst) in names.into_iter().zip(p.tensors_mut()) {
        let t = file.get(&format!("{prefix}.{name}"))?;
        if t.shape != shape {
            return Err(Error::Format(format!(
                "{prefix}.{name} has shape {:?}, expected {shape:?}",
                t.shape
            )));
        }
        dst.copy_from_slice(&t.data);
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::network::init_params;

    #[test]
    fn round_trip_through_bytes() {
        let mut cfg = ModelConfig::clm_default();
        cfg.n_frames = 32;
        cfg.n_mels = 16;
        cfg.filters = vec![4, 8];
        cfg.pools = vec![(2, 4), (2, 4)];
        cfg.heads = 2;
        cfg.positional_encoding = false;
        let p = init_params(&cfg, 3).unwrap();
        let mut f = TensorFile::new();
        write_model(&mut f, "clm", &p);
        let mut buf = Vec::new();
        f.write_to(&mut buf).unwrap();
        let back = TensorFile::read_from(&buf[..]).unwrap();
        assert_eq!(read_model(&back, "clm").unwrap(), p);
        assert!(read_model(&back, "flm").is_err());
    }

    #[test]
    fn pool_syntax() {
        assert_eq!(parse_pools("1x4, 2x2").unwrap(), vec![(1, 4), (2, 2)]);
        assert!(parse_pools("14").is_err());
    }
}
