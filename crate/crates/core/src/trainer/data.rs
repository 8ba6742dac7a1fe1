use crate::error::Result;
use crate::geometry::BoxCcwh;
use crate::synth::{gen_scene, perturb, NoiseModel, SizeDistribution, DEFAULT_IMAGE_SIDE};

/// Mixes a base seed and an index into an independent seed (splitmix64).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const LABELED_SALT: u64 = 0x004C_4142_454C_4544;
const UNLABELED_SALT: u64 = 0x0055_4E4C_4142_454C;

/// Ground truth with one initial box per gt (same order).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScene {
    pub id: u64,
    pub gt: Vec<BoxCcwh>,
    pub init: Vec<BoxCcwh>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub scenes: Vec<LabeledScene>,
    /// Virtual image side used to bucket boxes by pixel area.
    pub image_side: f64,
}

impl Dataset {
    pub fn generate(
        seed: u64,
        n_scenes: usize,
        boxes_per_scene: usize,
        dist: &SizeDistribution,
        noise: &NoiseModel,
    ) -> Result<Self> {
        noise.validate()?;
        let scenes = (0..n_scenes as u64)
            .map(|k| {
                let s = derive_seed(seed ^ LABELED_SALT, k);
                let scene = gen_scene(s, boxes_per_scene, dist)?;
                let init = perturb(&scene, noise, s);
                Ok(LabeledScene { id: scene.id, gt: scene.gt, init })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            scenes,
            image_side: dist.image_side,
        })
    }

    pub fn from_scenes(scenes: Vec<LabeledScene>) -> Self {
        Self {
            scenes,
            image_side: DEFAULT_IMAGE_SIDE,
        }
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    pub fn inits(&self) -> Vec<Vec<BoxCcwh>> {
        self.scenes.iter().map(|s| s.init.clone()).collect()
    }

    pub fn targets(&self) -> Vec<Vec<BoxCcwh>> {
        self.scenes.iter().map(|s| s.gt.clone()).collect()
    }

    pub fn scenes_for_export(&self) -> Vec<crate::synth::Scene> {
        self.scenes
            .iter()
            .map(|s| crate::synth::Scene { id: s.id, gt: s.gt.clone() })
            .collect()
    }
}

/// An unlabeled scene: hidden ground truth (evaluation only) seen through a
/// weak view for the teacher and a strong view for the student.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledScene {
    pub id: u64,
    pub gt: Vec<BoxCcwh>,
    pub weak: Vec<BoxCcwh>,
    pub strong: Vec<BoxCcwh>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledSet {
    pub scenes: Vec<UnlabeledScene>,
    pub image_side: f64,
}

impl UnlabeledSet {
    pub fn generate(
        seed: u64,
        n_scenes: usize,
        boxes_per_scene: usize,
        dist: &SizeDistribution,
        weak: &NoiseModel,
        strong: &NoiseModel,
    ) -> Result<Self> {
        weak.validate()?;
        strong.validate()?;
        let scenes = (0..n_scenes as u64)
            .map(|k| {
                let s = derive_seed(seed ^ UNLABELED_SALT, k);
                let scene = gen_scene(s, boxes_per_scene, dist)?;
                let weak_view = perturb(&scene, weak, derive_seed(s, 1));
                let strong_view = perturb(&scene, strong, derive_seed(s, 2));
                Ok(UnlabeledScene {
                    id: scene.id,
                    gt: scene.gt,
                    weak: weak_view,
                    strong: strong_view,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            scenes,
            image_side: dist.image_side,
        })
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }
}
