//! Offline `(image, goal, y)` datasets and retrieval probes for aligning goal
//! encoders, annotated by ground-truth raycast visibility.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::{derive_audio, derive_edgemap, derive_sketch, render_layers, GoalDescriptor, Modality, Observation, RenderConfig, RenderLayers, AUDIO_NOISE_SCALE};
use crate::worldgen::{DistanceField, FloorPlan, GridPos, ObjectCategory, Pose, RoomCategory};

/// Objects count as visible only within this many meters...
pub const VISIBILITY_RANGE: f64 = 5.0;
/// ...and when they cover at least this many image columns.
pub const VISIBILITY_MIN_COLUMNS: usize = 3;

/// Vocabulary of label goals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelVocab {
    Objects,
    Rooms,
}

/// Instance ids of objects visible in a rendered view.
pub fn visible_instances(plan: &FloorPlan, layers: &RenderLayers) -> Vec<usize> {
    plan.objects()
        .iter()
        .map(|o| o.instance_id)
        .filter(|&id| layers.visible_columns(id, VISIBILITY_RANGE) >= VISIBILITY_MIN_COLUMNS)
        .collect()
}

/// Disjoint per-category seed pools for sketch variants or audio noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSplit {
    pub modality: Modality,
    pub train: Vec<Vec<u64>>,
    pub test: Vec<Vec<u64>>,
}

/// Split per-category goal instances into train and test pools: 80 sketch
/// variants per category as 70/10, 12 audio clips per category as 6/6.
pub fn train_test_instance_split<R: Rng + ?Sized>(modality: Modality, rng: &mut R) -> Result<InstanceSplit> {
    let (n_train, n_test) = match modality {
        Modality::Sketch => (70, 10),
        Modality::Audio => (6, 6),
        other => return Err(Error::ModalityMismatch { expected: "sketch or audio".into(), found: other.to_string() }),
    };
    let mut used = HashSet::new();
    let mut draw = |n: usize, rng: &mut R| -> Vec<u64> {
        let mut v = Vec::with_capacity(n);
        while v.len() < n {
            let s: u64 = rng.gen();
            if used.insert(s) {
                v.push(s);
            }
        }
        v
    };
    let mut train = Vec::new();
    let mut test = Vec::new();
    for _ in 0..6 {
        train.push(draw(n_train, rng));
        test.push(draw(n_test, rng));
    }
    Ok(InstanceSplit { modality, train, test })
}

/// Which pair dataset to build.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSpec {
    pub modality: Modality,
    /// Total pairs; half positive, half negative.
    pub size: usize,
    pub vocab: LabelVocab,
    /// Seed pools for sketch/audio goals (the train side is used for
    /// datasets, the test side for probes).
    pub split: Option<InstanceSplit>,
    pub render: RenderConfig,
}

impl PairSpec {
    pub fn new(modality: Modality, size: usize) -> Self {
        Self { modality, size, vocab: LabelVocab::Objects, split: None, render: RenderConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub image: Observation,
    pub goal: GoalDescriptor,
    /// +1 for matching pairs, -1 otherwise.
    pub y: i8,
    /// Category of the goal (label/sketch/audio).
    pub category: Option<usize>,
    /// Categories present in the image under ground truth.
    pub image_categories: Vec<usize>,
    pub plan_id: u64,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairDataset {
    pub modality: Modality,
    pub entries: Vec<PairEntry>,
}

impl PairDataset {
    pub fn positives(&self) -> usize {
        self.entries.iter().filter(|e| e.y > 0).count()
    }

    pub fn negatives(&self) -> usize {
        self.entries.iter().filter(|e| e.y < 0).count()
    }
}

/// A rendered random view with its ground-truth annotation.
struct View {
    plan_idx: usize,
    pose: Pose,
    image: Observation,
    /// Visible `(category, instance)` pairs.
    visible: Vec<(usize, usize)>,
    room: usize,
}

impl View {
    fn categories(&self, vocab: LabelVocab) -> Vec<usize> {
        match vocab {
            LabelVocab::Rooms => vec![self.room],
            LabelVocab::Objects => {
                let mut c: Vec<usize> = self.visible.iter().map(|v| v.0).collect();
                c.sort_unstable();
                c.dedup();
                c
            }
        }
    }
}

fn sample_view<R: Rng + ?Sized>(plans: &[FloorPlan], render: &RenderConfig, rng: &mut R) -> Result<View> {
    let plan_idx = rng.gen_range(0..plans.len());
    let plan = &plans[plan_idx];
    loop {
        let r = rng.gen_range(0..plan.height());
        let c = rng.gen_range(0..plan.width());
        let cell = GridPos::new(r, c);
        if !plan.is_free(cell) || plan.object_at(cell).is_some() {
            continue;
        }
        let pose = Pose::at_cell(cell, plan.cell_size(), rng.gen_range(0.0..std::f64::consts::TAU));
        let layers = render_layers(plan, &pose, render)?;
        let visible = visible_instances(plan, &layers).into_iter().map(|id| (plan.objects()[id].category.index(), id)).collect();
        let room = plan.room_at(cell).expect("free cells have rooms").category.index();
        return Ok(View { plan_idx, pose, image: layers.image, visible, room });
    }
}

fn seed_pool(split: &Option<InstanceSplit>, category: usize, train: bool) -> Option<&Vec<u64>> {
    split.as_ref().map(|s| if train { &s.train[category] } else { &s.test[category] }).filter(|p| !p.is_empty())
}

/// Goal descriptor of `category` for a view. Positive audio goals use the
/// geodesic distance to the nearest visible instance of the category.
fn category_goal<R: Rng + ?Sized>(
    plans: &[FloorPlan],
    view: &View,
    spec: &PairSpec,
    category: usize,
    train: bool,
    rng: &mut R,
) -> Result<Option<GoalDescriptor>> {
    let pick_seed = |rng: &mut R| match seed_pool(&spec.split, category, train) {
        Some(pool) => *pool.choose(rng).expect("non-empty"),
        None => rng.gen(),
    };
    match spec.modality {
        Modality::Label => Ok(Some(GoalDescriptor::Label(category))),
        Modality::Audio => {
            let plan = &plans[view.plan_idx];
            let cells: Vec<GridPos> = view
                .visible
                .iter()
                .filter(|v| v.0 == category)
                .flat_map(|v| plan.objects()[v.1].footprint.iter().copied())
                .collect();
            let dist = if cells.is_empty() {
                rng.gen_range(0.5..8.0)
            } else {
                let field = DistanceField::from_sources(plan, &cells)?;
                field.at_pose(plan, &view.pose)?.unwrap_or(0.0)
            };
            Ok(Some(derive_audio(category, dist, pick_seed(rng), AUDIO_NOISE_SCALE)?))
        }
        Modality::Sketch => {
            let cat = ObjectCategory::from_index(category).expect("object category");
            // Prefer an instance from the view's own plan, otherwise any plan.
            let mut owners: Vec<usize> = (0..plans.len()).filter(|&i| plans[i].objects_of(cat).next().is_some()).collect();
            if owners.contains(&view.plan_idx) {
                owners = vec![view.plan_idx];
            }
            let Some(&pi) = owners.choose(rng) else { return Ok(None) };
            let instances: Vec<_> = plans[pi].objects_of(cat).collect();
            let obj = *instances.choose(rng).expect("non-empty");
            match derive_sketch(&plans[pi], obj, pick_seed(rng), &spec.render) {
                Ok(g) => Ok(Some(g)),
                Err(Error::NoViewpoint(_)) => Ok(None),
                Err(e) => Err(e),
            }
        }
        other => Err(Error::ModalityMismatch { expected: "label, sketch or audio".into(), found: other.to_string() }),
    }
}

fn entry(plans: &[FloorPlan], view: &View, goal: GoalDescriptor, y: i8, category: Option<usize>, vocab: LabelVocab) -> PairEntry {
    PairEntry {
        image: view.image.clone(),
        goal,
        y,
        category,
        image_categories: view.categories(vocab),
        plan_id: plans[view.plan_idx].seed(),
        pose: view.pose,
    }
}

/// Build a class-balanced pair dataset of `spec.size` entries.
pub fn build_pair_dataset<R: Rng + ?Sized>(plans: &[FloorPlan], spec: &PairSpec, rng: &mut R) -> Result<PairDataset> {
    if plans.is_empty() {
        return Err(Error::Empty("plans"));
    }
    if spec.modality == Modality::Image {
        return Err(Error::ModalityMismatch { expected: "label, sketch, audio or edgemap".into(), found: "image".into() });
    }
    if spec.vocab == LabelVocab::Rooms && spec.modality != Modality::Label {
        return Err(Error::ModalityMismatch { expected: "label for room vocabulary".into(), found: spec.modality.to_string() });
    }
    let k = spec.size / 2;
    let mut pos: Vec<PairEntry> = Vec::with_capacity(k);
    let mut neg: Vec<PairEntry> = Vec::with_capacity(k);
    let max_views = 40 * spec.size.max(10);
    let mut previous: Option<View> = None;
    for _ in 0..max_views {
        if pos.len() >= k && neg.len() >= k {
            break;
        }
        let view = sample_view(plans, &spec.render, rng)?;
        let want_pos = pos.len() < k && (pos.len() <= neg.len() || neg.len() >= k);
        if spec.modality == Modality::Edgemap {
            if want_pos {
                let goal = derive_edgemap(&view.image);
                pos.push(entry(plans, &view, goal, 1, None, spec.vocab));
            } else if let Some(other) = &previous {
                if other.pose != view.pose || other.plan_idx != view.plan_idx {
                    let goal = derive_edgemap(&other.image);
                    neg.push(entry(plans, &view, goal, -1, None, spec.vocab));
                }
            }
            previous = Some(view);
            continue;
        }
        let present = view.categories(spec.vocab);
        if present.is_empty() {
            continue;
        }
        let (category, y) = if want_pos {
            (*present.choose(rng).expect("non-empty"), 1)
        } else {
            let absent: Vec<usize> = (0..6).filter(|c| !present.contains(c)).collect();
            let Some(&c) = absent.choose(rng) else { continue };
            (c, -1)
        };
        if let Some(goal) = category_goal(plans, &view, spec, category, true, rng)? {
            let e = entry(plans, &view, goal, y, Some(category), spec.vocab);
            if y > 0 {
                pos.push(e);
            } else {
                neg.push(e);
            }
        }
    }
    if pos.len() < k || neg.len() < k {
        return Err(Error::DatasetExhausted { requested: k, available: pos.len().min(neg.len()) });
    }
    let mut entries = pos;
    entries.append(&mut neg);
    entries.shuffle(rng);
    Ok(PairDataset { modality: spec.modality, entries })
}

/// One retrieval query: a goal and candidate images, exactly one matching.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalProbe {
    pub goal: GoalDescriptor,
    pub candidates: Vec<Observation>,
    pub correct: usize,
    pub category: Option<usize>,
}

/// Number of candidate images per probe; chance accuracy is its inverse.
pub const PROBE_CANDIDATES: usize = 6;

/// Build `n` probes. Category probes cycle through the categories; the
/// matching image shows the probe category, the distractors show objects
/// (or rooms) of other categories only. Sketch/audio goals come from the
/// test side of the split. Edgemap probes match a view to its own edgemap.
pub fn build_retrieval_probes<R: Rng + ?Sized>(plans: &[FloorPlan], spec: &PairSpec, n: usize, rng: &mut R) -> Result<Vec<RetrievalProbe>> {
    if plans.is_empty() {
        return Err(Error::Empty("plans"));
    }
    let mut probes = Vec::with_capacity(n);
    if spec.modality == Modality::Edgemap {
        for _ in 0..n {
            let views: Vec<View> = (0..PROBE_CANDIDATES).map(|_| sample_view(plans, &spec.render, rng)).collect::<Result<_>>()?;
            let correct = rng.gen_range(0..PROBE_CANDIDATES);
            probes.push(RetrievalProbe {
                goal: derive_edgemap(&views[correct].image),
                candidates: views.into_iter().map(|v| v.image).collect(),
                correct,
                category: None,
            });
        }
        return Ok(probes);
    }
    // Pool of annotated views, grouped by category.
    let mut by_cat: Vec<Vec<View>> = (0..6).map(|_| Vec::new()).collect();
    let per_cat = (n / 6 + PROBE_CANDIDATES).min(400);
    let mut attempts = 0;
    while by_cat.iter().filter(|v| v.len() >= per_cat).count() < 6 && attempts < 200 * per_cat {
        attempts += 1;
        let view = sample_view(plans, &spec.render, rng)?;
        let cats = view.categories(spec.vocab);
        if cats.len() != 1 {
            // Single-category views keep distractors unambiguous.
            continue;
        }
        if by_cat[cats[0]].len() < per_cat {
            by_cat[cats[0]].push(view);
        }
    }
    let available: Vec<usize> = (0..6).filter(|&c| !by_cat[c].is_empty()).collect();
    if available.len() < 2 {
        return Err(Error::DatasetExhausted { requested: n, available: 0 });
    }
    let mut i = 0;
    while probes.len() < n {
        let c = available[i % available.len()];
        i += 1;
        let target = by_cat[c].choose(rng).expect("non-empty");
        let mut others: Vec<usize> = available.iter().copied().filter(|&o| o != c).collect();
        others.shuffle(rng);
        let distractors: Vec<&View> = (0..PROBE_CANDIDATES - 1).map(|j| by_cat[others[j % others.len()]].choose(rng).expect("non-empty")).collect();
        let Some(goal) = category_goal(plans, target, spec, c, false, rng)? else { continue };
        let correct = rng.gen_range(0..PROBE_CANDIDATES);
        let mut candidates: Vec<Observation> = distractors.iter().map(|v| v.image.clone()).collect();
        candidates.insert(correct, target.image.clone());
        probes.push(RetrievalProbe { goal, candidates, correct, category: Some(c) });
    }
    Ok(probes)
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    y: i8,
    category: Option<usize>,
    image_categories: Vec<usize>,
    plan_id: u64,
    pose: Pose,
    goal_len: usize,
}

#[derive(Serialize, Deserialize)]
struct Index {
    format: String,
    modality: Modality,
    height: usize,
    width: usize,
    fov: f64,
    entries: Vec<IndexEntry>,
}

const INDEX_FORMAT: &str = "zsel-pairs v1";

fn write_f32s(w: &mut impl Write, v: &[f32]) -> std::io::Result<()> {
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_f32s(r: &mut impl Read, n: usize) -> Result<Vec<f32>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf).map_err(|_| Error::MissingArtifact("pair payload truncated".into()))?;
    Ok(buf.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect())
}

impl PairDataset {
    /// Persist as `index.json` plus raw little-endian f32 arrays
    /// `images.bin` (H x W x 3 per entry) and `goals.bin` (flattened goal
    /// payloads; a label is stored as one value).
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let first = self.entries.first().ok_or(Error::Empty("pair dataset"))?;
        let (height, width, fov) = (first.image.height, first.image.width, first.image.fov);
        let mut images = std::io::BufWriter::new(std::fs::File::create(dir.join("images.bin"))?);
        let mut goals = std::io::BufWriter::new(std::fs::File::create(dir.join("goals.bin"))?);
        let mut entries = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            write_f32s(&mut images, &e.image.pixels)?;
            let payload: Vec<f32> = match &e.goal {
                GoalDescriptor::Label(i) => vec![*i as f32],
                GoalDescriptor::Audio(v) => v.clone(),
                GoalDescriptor::Image(o) | GoalDescriptor::Sketch(o) | GoalDescriptor::Edgemap(o) => o.pixels.clone(),
            };
            write_f32s(&mut goals, &payload)?;
            entries.push(IndexEntry {
                y: e.y,
                category: e.category,
                image_categories: e.image_categories.clone(),
                plan_id: e.plan_id,
                pose: e.pose,
                goal_len: payload.len(),
            });
        }
        images.flush()?;
        goals.flush()?;
        let index = Index { format: INDEX_FORMAT.into(), modality: self.modality, height, width, fov, entries };
        std::fs::write(dir.join("index.json"), serde_json::to_vec_pretty(&index)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<PairDataset> {
        let index: Index = serde_json::from_slice(&std::fs::read(dir.join("index.json"))?)?;
        if index.format != INDEX_FORMAT {
            return Err(Error::Config(format!("unsupported pair dataset format `{}`", index.format)));
        }
        let mut images = std::io::BufReader::new(std::fs::File::open(dir.join("images.bin"))?);
        let mut goals = std::io::BufReader::new(std::fs::File::open(dir.join("goals.bin"))?);
        let npix = index.height * index.width * 3;
        let mut entries = Vec::with_capacity(index.entries.len());
        for ie in index.entries {
            let image = Observation { height: index.height, width: index.width, fov: index.fov, pixels: read_f32s(&mut images, npix)? };
            let payload = read_f32s(&mut goals, ie.goal_len)?;
            let obs = |pixels| Observation { height: index.height, width: index.width, fov: index.fov, pixels };
            let goal = match index.modality {
                Modality::Label => GoalDescriptor::Label(payload[0] as usize),
                Modality::Audio => GoalDescriptor::Audio(payload),
                Modality::Sketch => GoalDescriptor::Sketch(obs(payload)),
                Modality::Edgemap => GoalDescriptor::Edgemap(obs(payload)),
                Modality::Image => GoalDescriptor::Image(obs(payload)),
            };
            entries.push(PairEntry {
                image,
                goal,
                y: ie.y,
                category: ie.category,
                image_categories: ie.image_categories,
                plan_id: ie.plan_id,
                pose: ie.pose,
            });
        }
        Ok(PairDataset { modality: index.modality, entries })
    }
}

/// Display name of a category index in a label vocabulary.
pub fn category_name(vocab: LabelVocab, category: usize) -> &'static str {
    match vocab {
        LabelVocab::Objects => ObjectCategory::from_index(category).map_or("?", |c| c.name()),
        LabelVocab::Rooms => RoomCategory::from_index(category).map_or("?", |c| c.name()),
    }
}
