//! Downstream-task segmentation: the pluggable CT segmenter contract and a
//! built-in threshold segmenter good enough for clean phantoms, plus the
//! exclusion rules applied before Dice scoring.

use crate::error::{Error, Result};
use crate::volume::{
    IntensitySpace, LabelMeaning, LabelVolume, Volume, SUBREGION_BODY, SUBREGION_POSTERIOR,
};
use ndarray::Array3;
use std::collections::BTreeMap;

/// A CT segmenter: normalized CT in, vertebra labels (consecutive
/// craniocaudally) plus body/posterior subregions out, on the input grid.
pub trait Segmenter {
    fn segment(&self, ct: &Volume) -> Result<(LabelVolume, LabelVolume)>;
}

/// Bone-threshold segmenter: thresholds, takes 26-connected components above
/// a minimum size, orders them along the cranio-caudal axis, and splits each
/// into body/posterior at the anterior-posterior plane where the component's
/// cross-section collapses behind the body.
#[derive(Debug, Clone)]
pub struct ThresholdSegmenter {
    /// Normalized intensity above which a voxel counts as bone (~300 HU).
    pub bone_threshold: f32,
    /// Components smaller than this are noise, not vertebrae.
    pub min_component_voxels: usize,
    /// The body/posterior boundary is the first plane behind the body peak
    /// whose cross-section falls below this fraction of the peak.
    pub split_area_fraction: f64,
}

impl Default for ThresholdSegmenter {
    fn default() -> Self {
        ThresholdSegmenter {
            bone_threshold: 0.3,
            min_component_voxels: 100,
            split_area_fraction: 0.5,
        }
    }
}

impl Segmenter for ThresholdSegmenter {
    fn segment(&self, ct: &Volume) -> Result<(LabelVolume, LabelVolume)> {
        threshold_segment_with(ct, self)
    }
}

/// [`ThresholdSegmenter`] with defaults except the bone threshold.
pub fn threshold_segment(ct: &Volume, bone_threshold: f32) -> Result<(LabelVolume, LabelVolume)> {
    threshold_segment_with(
        ct,
        &ThresholdSegmenter {
            bone_threshold,
            ..Default::default()
        },
    )
}

fn threshold_segment_with(
    ct: &Volume,
    params: &ThresholdSegmenter,
) -> Result<(LabelVolume, LabelVolume)> {
    if ct.intensity_space != IntensitySpace::Normalized {
        return Err(Error::WrongIntensitySpace {
            op: "threshold_segment",
            expected: "normalized",
            actual: ct.intensity_space.name().to_string(),
        });
    }
    let dims = ct.dims();
    let mask = ct.data.mapv(|v| v > params.bone_threshold);
    if !mask.iter().any(|&m| m) {
        return Err(Error::EmptyBoneMask {
            threshold: params.bone_threshold,
        });
    }

    // 26-connected component labeling by flood fill.
    let mut component = Array3::<u32>::zeros((dims[0], dims[1], dims[2]));
    let mut sizes: Vec<usize> = vec![0]; // index 0 unused
    let mut centroids_z: Vec<f64> = vec![0.0];
    let mut stack: Vec<[usize; 3]> = Vec::new();
    let mut next = 0u32;
    for i in 0..dims[0] {
        for j in 0..dims[1] {
            for k in 0..dims[2] {
                if !mask[[i, j, k]] || component[[i, j, k]] != 0 {
                    continue;
                }
                next += 1;
                let mut size = 0usize;
                let mut zsum = 0.0f64;
                stack.push([i, j, k]);
                component[[i, j, k]] = next;
                while let Some([x, y, z]) = stack.pop() {
                    size += 1;
                    zsum += z as f64;
                    for dx in -1isize..=1 {
                        for dy in -1isize..=1 {
                            for dz in -1isize..=1 {
                                if dx == 0 && dy == 0 && dz == 0 {
                                    continue;
                                }
                                let nx = x as isize + dx;
                                let ny = y as isize + dy;
                                let nz = z as isize + dz;
                                if nx < 0
                                    || ny < 0
                                    || nz < 0
                                    || nx >= dims[0] as isize
                                    || ny >= dims[1] as isize
                                    || nz >= dims[2] as isize
                                {
                                    continue;
                                }
                                let n = [nx as usize, ny as usize, nz as usize];
                                if mask[n] && component[n] == 0 {
                                    component[n] = next;
                                    stack.push(n);
                                }
                            }
                        }
                    }
                }
                sizes.push(size);
                centroids_z.push(zsum / size as f64);
            }
        }
    }

    // Keep the big ones, ordered caudal to cranial.
    let mut kept: Vec<(u32, f64)> = (1..=next)
        .filter(|&c| sizes[c as usize] >= params.min_component_voxels)
        .map(|c| (c, centroids_z[c as usize]))
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyBoneMask {
            threshold: params.bone_threshold,
        });
    }
    kept.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    let mut relabel = vec![0u16; next as usize + 1];
    for (rank, (c, _)) in kept.iter().enumerate() {
        relabel[*c as usize] = (rank + 1) as u16;
    }

    let mut labels = Array3::<u16>::zeros((dims[0], dims[1], dims[2]));
    for (idx, &c) in component.indexed_iter() {
        if c != 0 {
            labels[idx] = relabel[c as usize];
        }
    }

    // Body/posterior split per vertebra from the anterior-posterior area
    // profile.
    let n_labels = kept.len() as u16;
    let mut boundary_y = vec![usize::MAX; n_labels as usize + 1];
    for id in 1..=n_labels {
        let mut area = vec![0usize; dims[1]];
        for (idx, &l) in labels.indexed_iter() {
            if l == id {
                area[idx.1] += 1;
            }
        }
        let peak_y = area
            .iter()
            .enumerate()
            .max_by_key(|(_, &a)| a)
            .map(|(y, _)| y)
            .unwrap_or(0);
        let cutoff = (area[peak_y] as f64 * params.split_area_fraction).ceil() as usize;
        let mut boundary = usize::MAX;
        for (y, &a) in area.iter().enumerate().skip(peak_y + 1) {
            if a > 0 && a < cutoff {
                boundary = y;
                break;
            }
        }
        boundary_y[id as usize] = boundary;
    }
    let mut subregions = Array3::<u16>::zeros((dims[0], dims[1], dims[2]));
    for (idx, &l) in labels.indexed_iter() {
        if l != 0 {
            subregions[idx] = if idx.1 >= boundary_y[l as usize] {
                SUBREGION_POSTERIOR
            } else {
                SUBREGION_BODY
            };
        }
    }

    let mut label_vol = LabelVolume::new(labels, ct.geom.clone())?;
    label_vol.meaning = (1..=n_labels)
        .map(|id| {
            (
                id,
                LabelMeaning {
                    vertebra: id,
                    subregion: 0,
                },
            )
        })
        .collect();
    let mut sub_vol = LabelVolume::new(subregions, ct.geom.clone())?;
    sub_vol.meaning = BTreeMap::from([
        (
            SUBREGION_BODY,
            LabelMeaning {
                vertebra: 0,
                subregion: SUBREGION_BODY,
            },
        ),
        (
            SUBREGION_POSTERIOR,
            LabelMeaning {
                vertebra: 0,
                subregion: SUBREGION_POSTERIOR,
            },
        ),
    ]);
    Ok((label_vol, sub_vol))
}

/// Which labels to drop before Dice scoring.
#[derive(Debug, Clone)]
pub struct ExclusionRules {
    /// Labels to drop unconditionally (e.g. a sacrum the segmenter cannot
    /// handle).
    pub sacrum_labels: Vec<u16>,
    /// A label touching a volume face is dropped when its extent along that
    /// axis is at most this fraction of the reference (full) extent; proxy
    /// for partially visualized vertebrae.
    pub boundary_fraction: f64,
}

impl Default for ExclusionRules {
    fn default() -> Self {
        ExclusionRules {
            sacrum_labels: Vec::new(),
            boundary_fraction: 0.5,
        }
    }
}

/// Drop labels per the exclusion rules, returning a copy with those labels
/// zeroed.
pub fn exclude_unsupported(labels: &LabelVolume, rules: &ExclusionRules) -> LabelVolume {
    let dims = labels.dims();
    #[derive(Clone)]
    struct BBox {
        min: [usize; 3],
        max: [usize; 3],
    }
    let mut boxes: BTreeMap<u16, BBox> = BTreeMap::new();
    for ((i, j, k), &l) in labels.data.indexed_iter() {
        if l == 0 {
            continue;
        }
        let b = boxes.entry(l).or_insert(BBox {
            min: [i, j, k],
            max: [i, j, k],
        });
        let p = [i, j, k];
        for a in 0..3 {
            b.min[a] = b.min[a].min(p[a]);
            b.max[a] = b.max[a].max(p[a]);
        }
    }

    let touches = |b: &BBox, a: usize| b.min[a] == 0 || b.max[a] == dims[a] - 1;
    let extent = |b: &BBox, a: usize| b.max[a] - b.min[a] + 1;

    // Reference extent per axis: the largest among labels clear of that
    // axis's faces; if every label touches, the largest overall.
    let mut reference = [0usize; 3];
    for a in 0..3 {
        let clear_max = boxes
            .values()
            .filter(|b| !touches(b, a))
            .map(|b| extent(b, a))
            .max();
        reference[a] = clear_max
            .or_else(|| boxes.values().map(|b| extent(b, a)).max())
            .unwrap_or(0);
    }

    let mut dropped: Vec<u16> = Vec::new();
    for (&id, b) in &boxes {
        if rules.sacrum_labels.contains(&id) {
            dropped.push(id);
            continue;
        }
        for a in 0..3 {
            if touches(b, a)
                && (extent(b, a) as f64) <= rules.boundary_fraction * reference[a] as f64
            {
                dropped.push(id);
                break;
            }
        }
    }

    if dropped.is_empty() {
        return labels.clone();
    }
    let data = labels
        .data
        .mapv(|l| if dropped.contains(&l) { 0 } else { l });
    let mut out = LabelVolume::new(data, labels.geom.clone()).expect("geometry already valid");
    out.meaning = labels
        .meaning
        .iter()
        .filter(|(id, _)| !dropped.contains(id))
        .map(|(id, m)| (*id, *m))
        .collect();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Geometry;
    use ndarray::Array3;

    fn norm_volume(data: Array3<f32>) -> Volume {
        Volume::new(data, Geometry::isotropic(1.0), IntensitySpace::Normalized).unwrap()
    }

    #[test]
    fn all_air_errors() {
        let v = norm_volume(Array3::from_elem((8, 8, 8), -1.0));
        assert!(matches!(
            threshold_segment(&v, 0.3),
            Err(Error::EmptyBoneMask { .. })
        ));
    }

    #[test]
    fn requires_normalized() {
        let v = Volume::new(
            Array3::zeros((4, 4, 4)),
            Geometry::isotropic(1.0),
            IntensitySpace::Hounsfield,
        )
        .unwrap();
        assert!(matches!(
            threshold_segment(&v, 0.3),
            Err(Error::WrongIntensitySpace { .. })
        ));
    }

    #[test]
    fn two_blobs_ordered_caudal_to_cranial() {
        let mut data = Array3::from_elem((16, 16, 40), 0.04f32);
        // Blob near the top (large z) and blob near the bottom.
        for i in 4..10 {
            for j in 4..10 {
                for k in 28..36 {
                    data[[i, j, k]] = 0.8;
                }
                for k in 4..12 {
                    data[[i, j, k]] = 0.8;
                }
            }
        }
        let v = norm_volume(data);
        let (labels, _) = threshold_segment_with(
            &v,
            &ThresholdSegmenter {
                min_component_voxels: 10,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(labels.labels(), vec![1, 2]);
        // Label 1 must be the low-z blob.
        assert_eq!(labels.data[[5, 5, 5]], 1);
        assert_eq!(labels.data[[5, 5, 30]], 2);
    }

    #[test]
    fn small_speckles_filtered() {
        let mut data = Array3::from_elem((16, 16, 16), -1.0f32);
        for i in 2..10 {
            for j in 2..10 {
                for k in 2..10 {
                    data[[i, j, k]] = 0.9;
                }
            }
        }
        data[[14, 14, 14]] = 0.9; // lone voxel
        let v = norm_volume(data);
        let (labels, _) = threshold_segment_with(
            &v,
            &ThresholdSegmenter {
                min_component_voxels: 100,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(labels.labels(), vec![1]);
        assert_eq!(labels.data[[14, 14, 14]], 0);
    }

    #[test]
    fn deterministic() {
        let mut data = Array3::from_elem((12, 12, 12), -0.5f32);
        for i in 2..9 {
            for j in 2..9 {
                for k in 2..9 {
                    data[[i, j, k]] = 0.7;
                }
            }
        }
        let v = norm_volume(data);
        let a = threshold_segment(&v, 0.3).unwrap();
        let b = threshold_segment(&v, 0.3).unwrap();
        assert_eq!(a.0.data, b.0.data);
        assert_eq!(a.1.data, b.1.data);
    }

    #[test]
    fn subregions_partition_labels() {
        // Wide slab (body) with a thin tail in +y (process).
        let mut data = Array3::from_elem((20, 40, 20), -1.0f32);
        for i in 2..18 {
            for j in 2..18 {
                for k in 2..18 {
                    data[[i, j, k]] = 0.8;
                }
            }
        }
        for i in 8..12 {
            for j in 18..36 {
                for k in 8..12 {
                    data[[i, j, k]] = 0.8;
                }
            }
        }
        let v = norm_volume(data);
        let (labels, subs) = threshold_segment(&v, 0.3).unwrap();
        assert_eq!(labels.labels(), vec![1]);
        let mut body = 0;
        let mut posterior = 0;
        for (idx, &l) in labels.data.indexed_iter() {
            if l != 0 {
                match subs.data[idx] {
                    SUBREGION_BODY => body += 1,
                    SUBREGION_POSTERIOR => posterior += 1,
                    other => panic!("labeled voxel with subregion {other}"),
                }
            } else {
                assert_eq!(subs.data[idx], 0);
            }
        }
        assert!(body > 0 && posterior > 0);
        // The tail must be posterior.
        assert_eq!(subs.data[[9, 30, 9]], SUBREGION_POSTERIOR);
        assert_eq!(subs.data[[9, 5, 9]], SUBREGION_BODY);
    }

    #[test]
    fn exclusion_identity_when_no_rule_matches() {
        let mut data = Array3::<u16>::zeros((10, 10, 30));
        for k in 5..12 {
            data[[5, 5, k]] = 1;
        }
        for k in 18..25 {
            data[[5, 5, k]] = 2;
        }
        let l = LabelVolume::new(data, Geometry::isotropic(1.0)).unwrap();
        let out = exclude_unsupported(&l, &ExclusionRules::default());
        assert_eq!(out.data, l.data);
    }

    #[test]
    fn clipped_label_removed() {
        let mut data = Array3::<u16>::zeros((10, 10, 30));
        // Full vertebra: z extent 8.
        for k in 10..18 {
            for i in 3..7 {
                data[[i, 5, k]] = 1;
            }
        }
        // Clipped at the top face: extent 4 (half of 8).
        for k in 26..30 {
            for i in 3..7 {
                data[[i, 5, k]] = 2;
            }
        }
        let l = LabelVolume::new(data, Geometry::isotropic(1.0)).unwrap();
        let out = exclude_unsupported(&l, &ExclusionRules::default());
        assert_eq!(out.labels(), vec![1]);
    }

    #[test]
    fn clean_phantom_segmentation_is_near_perfect() {
        use crate::landmarks::{extract_centroids, regenerate_landmarks};
        use crate::metrics::{dice_rows, DiceSubset};
        use crate::phantom::{generate_phantom, PhantomConfig};
        use crate::preprocess::normalize_ct;
        let cfg = PhantomConfig::default();
        let p = generate_phantom(&cfg).unwrap();
        let ct = normalize_ct(&p.ct).unwrap();
        let (seg, seg_subs) = threshold_segment(&ct, 0.3).unwrap();
        assert_eq!(seg.labels().len(), cfg.n_vertebrae);
        let rows = dice_rows(&seg, &p.labels, DiceSubset::All, None, None).unwrap();
        for r in &rows {
            assert!(
                r.dice >= 0.95,
                "vertebra {} dice {} on the clean phantom",
                r.vertebra,
                r.dice
            );
        }
        // Feeding the segmentation back closes the landmark loop within a
        // voxel.
        let truth = extract_centroids(&p.labels, Some(&p.subregions)).unwrap();
        let regen = regenerate_landmarks(&seg, &seg_subs).unwrap();
        for (a, b) in truth.entries.iter().zip(regen.entries.iter()) {
            assert_eq!(a.id, b.id);
            assert!(
                (a.body - b.body).norm() < cfg.spacing,
                "body centroid {} off by {}",
                a.id,
                (a.body - b.body).norm()
            );
        }
    }

    #[test]
    fn phantom_cropped_mid_vertebra_loses_one_label() {
        use crate::phantom::{generate_phantom, PhantomConfig};
        let cfg = PhantomConfig::default();
        let p = generate_phantom(&cfg).unwrap();
        // Cut the volume through the middle of the topmost vertebra.
        let cut = (cfg.body_center_world(cfg.n_vertebrae - 1).z / cfg.spacing) as usize;
        let cropped = LabelVolume::new(
            p.labels.data.slice(ndarray::s![.., .., ..cut]).to_owned(),
            p.labels.geom.clone(),
        )
        .unwrap();
        assert_eq!(cropped.labels().len(), cfg.n_vertebrae);
        let out = exclude_unsupported(&cropped, &ExclusionRules::default());
        assert_eq!(
            out.labels().len(),
            cfg.n_vertebrae - 1,
            "exactly the clipped vertebra must go"
        );
        assert!(!out.labels().contains(&(cfg.n_vertebrae as u16)));
    }

    #[test]
    fn sacrum_rule_drops_unconditionally() {
        let mut data = Array3::<u16>::zeros((8, 8, 8));
        data[[4, 4, 4]] = 3;
        data[[2, 2, 2]] = 1;
        let l = LabelVolume::new(data, Geometry::isotropic(1.0)).unwrap();
        let out = exclude_unsupported(
            &l,
            &ExclusionRules {
                sacrum_labels: vec![3],
                boundary_fraction: 0.0,
            },
        );
        assert_eq!(out.labels(), vec![1]);
    }
}
