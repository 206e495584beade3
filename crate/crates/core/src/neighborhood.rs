//! Neighborhood construction around an explained instance.
//!
//! Training instances are admitted by an exponential similarity kernel with a
//! per-class cut point and capped per class; synthetic instances are then
//! interpolated (crossover) or perturbed (differential mutation) from the
//! admitted ones.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::data::{Cell, DatasetSchema, Instance, InstanceTable};
use crate::error::{Error, Result};
use crate::preprocess::{EncodedInstance, FeatureStats, PreprocessorModel};

const SELECTION_STREAM: u64 = 1;
const GENERATION_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilarityParams {
    /// Kernel width; `None` means `0.75 * sqrt(#encoded features)`.
    pub kernel_width: Option<f64>,
    pub min_per_class: usize,
    /// Per-class cap; `None` means `5 * min_per_class`.
    pub max_per_class: Option<usize>,
}

impl Default for SimilarityParams {
    fn default() -> Self {
        SimilarityParams {
            kernel_width: None,
            min_per_class: 40,
            max_per_class: None,
        }
    }
}

impl SimilarityParams {
    pub fn width(&self, encoded_len: usize) -> f64 {
        self.kernel_width
            .unwrap_or_else(|| 0.75 * (encoded_len as f64).sqrt())
    }

    pub fn cap(&self) -> usize {
        self.max_per_class.unwrap_or(5 * self.min_per_class)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(w) = self.kernel_width {
            if !(w > 0.0) {
                return Err(Error::NonPositiveWidth(w));
            }
        }
        if self.min_per_class == 0 {
            return Err(Error::InvalidParameter("min_per_class must be >= 1".into()));
        }
        if self.cap() < self.min_per_class {
            return Err(Error::InvalidParameter(format!(
                "max_per_class ({}) must be >= min_per_class ({})",
                self.cap(),
                self.min_per_class
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationParams {
    pub n_generated: usize,
    pub crossover_fraction: f64,
    pub rng_seed: u64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            n_generated: 1000,
            crossover_fraction: 0.5,
            rng_seed: 0,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.crossover_fraction) {
            return Err(Error::InvalidFraction(self.crossover_fraction));
        }
        Ok(())
    }

    pub fn n_crossover(&self) -> usize {
        (self.crossover_fraction * self.n_generated as f64).floor() as usize
    }
}

/// `exp(-d^2 / (2 w^2))` with `d` the Euclidean distance.
pub fn similarity(a: &EncodedInstance, b: &EncodedInstance, width: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if !(width > 0.0) {
        return Err(Error::NonPositiveWidth(width));
    }
    let d2 = squared_distance(a.as_slice(), b.as_slice());
    Ok((-d2 / (2.0 * width * width)).exp())
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedInstance {
    /// Row index in the training table.
    pub row: usize,
    pub instance: Instance,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Ordered by training row index.
    pub selected: Vec<SelectedInstance>,
    pub cut_point: f64,
    /// Number of instances per class that cleared the cut point, before capping.
    pub eligible_per_class: Vec<usize>,
}

/// Admits training instances whose similarity reaches the cut point, the
/// smallest of the per-class L-th highest similarities, and then caps every
/// class at M by seeded sampling without replacement.
pub fn select_neighbors(
    train_encoded: &[EncodedInstance],
    train_raw: &InstanceTable,
    explained: &EncodedInstance,
    params: &SimilarityParams,
    seed: u64,
) -> Result<Selection> {
    params.validate()?;
    if train_raw.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if train_encoded.len() != train_raw.len() {
        return Err(Error::LengthMismatch(train_encoded.len(), train_raw.len()));
    }
    let width = params.width(explained.len());
    let schema = &train_raw.schema;
    let n_classes = schema.class_labels().len();

    let sims = train_encoded
        .iter()
        .map(|e| similarity(e, explained, width))
        .collect::<Result<Vec<_>>>()?;

    // rows with a missing target cannot be grouped and are skipped
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (row, inst) in train_raw.rows.iter().enumerate() {
        if let Some(c) = inst.target(schema) {
            by_class[c].push(row);
        }
    }
    if let Some(empty) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::EmptyClass(schema.class_labels()[empty].clone()));
    }

    let cut_point = by_class
        .iter()
        .map(|rows| {
            let mut s: Vec<f64> = rows.iter().map(|&r| sims[r]).collect();
            s.sort_by(|a, b| b.total_cmp(a));
            s[params.min_per_class.min(s.len()) - 1]
        })
        .fold(f64::INFINITY, f64::min);

    let cap = params.cap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SELECTION_STREAM);
    let mut keep = Vec::new();
    let mut eligible_per_class = Vec::with_capacity(n_classes);
    for rows in &by_class {
        let eligible: Vec<usize> = rows.iter().copied().filter(|&r| sims[r] >= cut_point).collect();
        eligible_per_class.push(eligible.len());
        if eligible.len() > cap {
            let mut picked: Vec<usize> = sample(&mut rng, eligible.len(), cap)
                .into_iter()
                .map(|i| eligible[i])
                .collect();
            picked.sort_unstable();
            keep.extend(picked);
        } else {
            keep.extend(eligible);
        }
    }
    keep.sort_unstable();
    let selected = keep
        .into_iter()
        .map(|row| SelectedInstance {
            row,
            instance: train_raw.rows[row].clone(),
            similarity: sims[row],
        })
        .collect();
    Ok(Selection {
        selected,
        cut_point,
        eligible_per_class,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationKind {
    Crossover,
    Mutation,
}

/// A synthetic instance with the draw that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedInstance {
    pub instance: Instance,
    pub kind: GenerationKind,
    /// Parent indices in draw order: `[x, y]` or `[x, y, z]`.
    pub parents: Vec<usize>,
    /// `alpha` for crossover, `sigma` for mutation.
    pub factor: f64,
    /// The parent whose categorical values were copied.
    pub closest_parent: usize,
}

/// `x + (y - x) * alpha` on every numeric feature, clamped to the parents'
/// range against rounding.
pub fn crossover(x: &Instance, y: &Instance, alpha: f64, numeric: &[usize]) -> Instance {
    let mut child = x.clone();
    for &c in numeric {
        let (a, b) = (num(x, c), num(y, c));
        child.values[c] = Cell::Num((a + (b - a) * alpha).clamp(a.min(b), a.max(b)));
    }
    child
}

/// `x + (y - z) * sigma` on every numeric feature.
pub fn mutation(x: &Instance, y: &Instance, z: &Instance, sigma: f64, numeric: &[usize]) -> Instance {
    let mut child = x.clone();
    for &c in numeric {
        child.values[c] = Cell::Num(num(x, c) + (num(y, c) - num(z, c)) * sigma);
    }
    child
}

fn num(inst: &Instance, column: usize) -> f64 {
    inst.values[column]
        .as_num()
        .expect("parents are imputed before generation")
}

/// Generates synthetic instances and reports how each one was built.
pub fn generate_with_provenance(
    parents: &[Instance],
    explained: &Instance,
    model: &PreprocessorModel,
    params: &GenerationParams,
) -> Result<Vec<GeneratedInstance>> {
    params.validate()?;
    if params.n_generated == 0 {
        return Ok(Vec::new());
    }
    if parents.len() < 3 {
        return Err(Error::TooFewParents {
            needed: 3,
            got: parents.len(),
        });
    }
    let schema = &model.schema;
    let parents: Vec<Instance> = parents.iter().map(|p| model.impute(p)).collect();
    let parent_dist = {
        let target = model.encode(explained)?;
        parents
            .iter()
            .map(|p| Ok(squared_distance(model.encode(p)?.as_slice(), target.as_slice())))
            .collect::<Result<Vec<f64>>>()?
    };
    let numeric: Vec<usize> = model
        .features
        .iter()
        .filter_map(|f| match f {
            FeatureStats::Numeric { column, .. } => Some(*column),
            _ => None,
        })
        .collect();
    let categorical: Vec<usize> = model
        .features
        .iter()
        .filter_map(|f| match f {
            FeatureStats::Categorical { column, .. } => Some(*column),
            _ => None,
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    rng.set_stream(GENERATION_STREAM);
    let n_cross = params.n_crossover();
    let mut out = Vec::with_capacity(params.n_generated);
    for i in 0..params.n_generated {
        let (kind, draw) = if i < n_cross {
            (GenerationKind::Crossover, sample(&mut rng, parents.len(), 2).into_vec())
        } else {
            (GenerationKind::Mutation, sample(&mut rng, parents.len(), 3).into_vec())
        };
        let (mut child, factor) = match kind {
            GenerationKind::Crossover => {
                let alpha: f64 = rng.gen();
                (crossover(&parents[draw[0]], &parents[draw[1]], alpha, &numeric), alpha)
            }
            GenerationKind::Mutation => {
                let sigma = 0.5 + 0.5 * rng.gen::<f64>();
                (
                    mutation(&parents[draw[0]], &parents[draw[1]], &parents[draw[2]], sigma, &numeric),
                    sigma,
                )
            }
        };
        // first drawn parent wins distance ties
        let closest = draw
            .iter()
            .copied()
            .fold(None, |best: Option<usize>, p| match best {
                Some(b) if parent_dist[b] <= parent_dist[p] => Some(b),
                _ => Some(p),
            })
            .expect("non-empty draw");
        for &c in &categorical {
            child.values[c] = parents[closest].values[c];
        }
        child.values[schema.target_index()] = Cell::Missing;
        out.push(GeneratedInstance {
            instance: child,
            kind,
            parents: draw,
            factor,
            closest_parent: closest,
        });
    }
    Ok(out)
}

pub fn generate_instances(
    parents: &[Instance],
    explained: &Instance,
    model: &PreprocessorModel,
    params: &GenerationParams,
) -> Result<Vec<Instance>> {
    Ok(generate_with_provenance(parents, explained, model, params)?
        .into_iter()
        .map(|g| g.instance)
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    pub selected: Vec<SelectedInstance>,
    pub generated: Vec<Instance>,
    pub explained: Instance,
    pub cut_point: f64,
    pub seed: u64,
    pub eligible_per_class: Vec<usize>,
}

impl Neighborhood {
    /// Selected instances followed by generated ones.
    pub fn combined(&self) -> Vec<Instance> {
        self.selected
            .iter()
            .map(|s| s.instance.clone())
            .chain(self.generated.iter().cloned())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.selected.len() + self.generated.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_json(&self, schema: &DatasetSchema) -> Value {
        let cells = |inst: &Instance| -> Vec<Value> {
            inst.values
                .iter()
                .zip(schema.columns())
                .map(|(c, col)| c.to_json(col))
                .collect()
        };
        json!({
            "columns": schema.columns().iter().map(|c| &c.name).collect::<Vec<_>>(),
            "seed": self.seed,
            "cut_point": self.cut_point,
            "explained": cells(&self.explained),
            "selected": self.selected.iter().map(|s| json!({
                "row": s.row,
                "similarity": s.similarity,
                "instance": cells(&s.instance),
            })).collect::<Vec<_>>(),
            "generated": self.generated.iter().map(cells).collect::<Vec<_>>(),
        })
    }

    /// Rebuilds a neighborhood from its JSON dump.
    pub fn from_json(value: &Value, schema: &DatasetSchema) -> Result<Neighborhood> {
        let bad = |what: &str| Error::SchemaMismatch(format!("neighborhood json: bad `{what}`"));
        let cells = |v: &Value| -> Result<Instance> {
            let arr = v.as_array().ok_or_else(|| bad("instance"))?;
            if arr.len() != schema.len() {
                return Err(bad("instance arity"));
            }
            Ok(Instance::new(
                arr.iter()
                    .zip(schema.columns())
                    .map(|(v, col)| Cell::from_json(v, col))
                    .collect::<Result<_>>()?,
            ))
        };
        let selected = value["selected"]
            .as_array()
            .ok_or_else(|| bad("selected"))?
            .iter()
            .map(|s| {
                Ok(SelectedInstance {
                    row: s["row"].as_u64().ok_or_else(|| bad("row"))? as usize,
                    similarity: s["similarity"].as_f64().ok_or_else(|| bad("similarity"))?,
                    instance: cells(&s["instance"])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let generated = value["generated"]
            .as_array()
            .ok_or_else(|| bad("generated"))?
            .iter()
            .map(cells)
            .collect::<Result<Vec<_>>>()?;
        Ok(Neighborhood {
            selected,
            generated,
            explained: cells(&value["explained"])?,
            cut_point: value["cut_point"].as_f64().ok_or_else(|| bad("cut_point"))?,
            seed: value["seed"].as_u64().ok_or_else(|| bad("seed"))?,
            eligible_per_class: Vec::new(),
        })
    }
}

/// Selection followed by generation, both driven by `gen.rng_seed`.
pub fn build_neighborhood(
    train: &InstanceTable,
    train_encoded: &[EncodedInstance],
    model: &PreprocessorModel,
    explained: &Instance,
    sim: &SimilarityParams,
    gen: &GenerationParams,
) -> Result<Neighborhood> {
    gen.validate()?;
    let target = model.encode(explained)?;
    let selection = select_neighbors(train_encoded, train, &target, sim, gen.rng_seed)?;
    let parents: Vec<Instance> = selection.selected.iter().map(|s| s.instance.clone()).collect();
    let generated = generate_instances(&parents, explained, model, gen)?;
    Ok(Neighborhood {
        selected: selection.selected,
        generated,
        explained: explained.clone(),
        cut_point: selection.cut_point,
        seed: gen.rng_seed,
        eligible_per_class: selection.eligible_per_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ColumnSpec;
    use crate::preprocess::fit;
    use proptest::prelude::*;

    fn enc(v: &[f64]) -> EncodedInstance {
        EncodedInstance(v.to_vec())
    }

    #[test]
    fn kernel_values() {
        let a = enc(&[1.0, 2.0]);
        assert_eq!(similarity(&a, &a, 0.3).unwrap(), 1.0);
        let b = enc(&[1.0, 2.5]);
        let s = similarity(&a, &b, 0.5).unwrap();
        assert!((s - (-0.5f64).exp()).abs() < 1e-12);
        assert!((s - 0.606531).abs() < 1e-6);
        assert!(similarity(&a, &b, 1e6).unwrap() > 0.999_999);
        assert!(similarity(&a, &b, 1e-3).unwrap() < 1e-100);
        assert!(matches!(
            similarity(&a, &enc(&[1.0]), 1.0),
            Err(Error::LengthMismatch(2, 1))
        ));
        assert!(matches!(similarity(&a, &b, 0.0), Err(Error::NonPositiveWidth(_))));
    }

    fn toy_schema() -> DatasetSchema {
        DatasetSchema::new(
            vec![
                ColumnSpec::numeric("x"),
                ColumnSpec::categorical("c", ["a", "b"]),
                ColumnSpec::categorical("y", ["n", "p"]),
            ],
            "y",
        )
        .unwrap()
    }

    fn row(x: f64, c: u32, y: u32) -> Instance {
        Instance::new(vec![Cell::Num(x), Cell::Cat(c), Cell::Cat(y)])
    }

    #[test]
    fn mutation_arithmetic() {
        let x = row(0.0, 0, 0);
        let y = row(4.0, 0, 0);
        let z = row(1.0, 0, 0);
        let child = mutation(&x, &y, &z, 0.5, &[0]);
        assert_eq!(child.values[0], Cell::Num(1.5));
    }

    #[test]
    fn crossover_endpoints() {
        let x = row(2.0, 0, 0);
        let y = row(8.0, 1, 1);
        assert_eq!(crossover(&x, &y, 0.0, &[0]).values[0], Cell::Num(2.0));
        assert_eq!(crossover(&x, &y, 1.0, &[0]).values[0], Cell::Num(8.0));
    }

    #[test]
    fn too_few_parents_and_bad_fraction() {
        let schema = toy_schema();
        let t = InstanceTable::new(schema, vec![row(1.0, 0, 0), row(2.0, 1, 1)]).unwrap();
        let m = fit(&t).unwrap();
        let params = GenerationParams {
            n_generated: 4,
            ..Default::default()
        };
        assert!(matches!(
            generate_instances(&t.rows, &t.rows[0], &m, &params),
            Err(Error::TooFewParents { .. })
        ));
        let params = GenerationParams {
            crossover_fraction: 1.5,
            ..Default::default()
        };
        assert!(matches!(
            generate_instances(&t.rows, &t.rows[0], &m, &params),
            Err(Error::InvalidFraction(_))
        ));
        let none = GenerationParams {
            n_generated: 0,
            ..Default::default()
        };
        assert!(generate_instances(&t.rows, &t.rows[0], &m, &none).unwrap().is_empty());
    }

    #[test]
    fn classes_of_exactly_l_members_select_everything() {
        let rows: Vec<_> = (0..6).map(|i| row(i as f64, 0, (i % 2) as u32)).collect();
        let t = InstanceTable::new(toy_schema(), rows).unwrap();
        let m = fit(&t).unwrap();
        let enc = m.transform(&t).unwrap();
        let params = SimilarityParams {
            min_per_class: 3,
            ..Default::default()
        };
        let sel = select_neighbors(&enc, &t, &enc[0], &params, 1).unwrap();
        assert_eq!(sel.selected.len(), 6);
        let min = sel.selected.iter().map(|s| s.similarity).fold(1.0, f64::min);
        assert_eq!(sel.cut_point, min);
    }

    #[test]
    fn cap_limits_each_class() {
        let mut rows: Vec<_> = (0..50).map(|i| row(i as f64 * 0.01, 0, 1)).collect();
        rows.push(row(5.0, 1, 0));
        let t = InstanceTable::new(toy_schema(), rows).unwrap();
        let m = fit(&t).unwrap();
        let enc = m.transform(&t).unwrap();
        let params = SimilarityParams {
            min_per_class: 1,
            max_per_class: Some(5),
            kernel_width: None,
        };
        let sel = select_neighbors(&enc, &t, &enc[0], &params, 9).unwrap();
        let positives = sel
            .selected
            .iter()
            .filter(|s| s.instance.values[2] == Cell::Cat(1))
            .count();
        assert_eq!(positives, 5);
        assert_eq!(sel.eligible_per_class, vec![1, 50]);
    }

    #[test]
    fn empty_class_is_an_error() {
        let rows: Vec<_> = (0..4).map(|i| row(i as f64, 0, 1)).collect();
        let t = InstanceTable::new(toy_schema(), rows).unwrap();
        let m = fit(&t).unwrap();
        let enc = m.transform(&t).unwrap();
        assert!(matches!(
            select_neighbors(&enc, &t, &enc[0], &SimilarityParams::default(), 0),
            Err(Error::EmptyClass(_))
        ));
        let empty = InstanceTable::new(toy_schema(), vec![]).unwrap();
        assert!(matches!(
            select_neighbors(&[], &empty, &enc[0], &SimilarityParams::default(), 0),
            Err(Error::EmptyTrainingSet)
        ));
    }

    #[test]
    fn generated_categoricals_come_from_closest_parent() {
        let rows = vec![
            row(0.0, 0, 0),
            row(10.0, 1, 1),
            row(0.5, 0, 1),
            row(9.0, 1, 0),
        ];
        let t = InstanceTable::new(toy_schema(), rows).unwrap();
        let m = fit(&t).unwrap();
        let params = GenerationParams {
            n_generated: 200,
            crossover_fraction: 0.5,
            rng_seed: 3,
        };
        let generated = generate_with_provenance(&t.rows, &t.rows[0], &m, &params).unwrap();
        assert_eq!(generated.len(), 200);
        let n_cross = generated.iter().filter(|g| g.kind == GenerationKind::Crossover).count();
        assert_eq!(n_cross, 100);
        let explained = m.encode(&t.rows[0]).unwrap();
        for g in &generated {
            let dist = |p: usize| {
                squared_distance(m.encode(&t.rows[p]).unwrap().as_slice(), explained.as_slice())
            };
            let best = g.parents.iter().map(|&p| dist(p)).fold(f64::INFINITY, f64::min);
            assert_eq!(dist(g.closest_parent), best);
            assert_eq!(g.instance.values[1], t.rows[g.closest_parent].values[1]);
            assert!(g.instance.values[2].is_missing());
        }
    }

    proptest! {
        #[test]
        fn kernel_is_symmetric_and_bounded(
            a in proptest::collection::vec(-5f64..5.0, 3),
            b in proptest::collection::vec(-5f64..5.0, 3),
            w in 0.1f64..10.0,
        ) {
            let (ea, eb) = (enc(&a), enc(&b));
            let s = similarity(&ea, &eb, w).unwrap();
            prop_assert_eq!(s, similarity(&eb, &ea, w).unwrap());
            prop_assert!((0.0..=1.0).contains(&s));
            if squared_distance(&a, &b) / (2.0 * w * w) < 700.0 {
                prop_assert!(s > 0.0);
            }
            if a != b {
                prop_assert!(s < 1.0 || squared_distance(&a, &b) / (2.0 * w * w) < 1e-16);
            }
        }
    }
}
