//! Module registry and config-file machinery: every processing module
//! exposes its parameters as properties, and a whole pipeline is built from
//! one JSON-lines config file (root object marked `"root": true`).

use crate::frontend::{
    AlignConfig, AssemblyParams, MergeParams, PreprocessParams, SensorExtrinsics, SplitThresholds,
    TrackerConfig,
};
use crate::graph::LoopConfig;
use crate::props::{
    value_from_json, value_to_json, PropertyContainer, PropertyValue, PropsError,
    SerializedObject,
};
use crate::solver::SolveSettings;
use nalgebra::{Matrix3, Vector3};
use serde_json::{json, Map, Value};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct SlotSpec {
    pub name: String,
    pub required: bool,
    /// Multi slots take an ordered list of references (e.g. slices).
    pub multi: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigurableSpec {
    pub class_name: String,
    pub defaults: PropertyContainer,
    pub slots: Vec<SlotSpec>,
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("class '{0}' is already registered")]
    DuplicateClass(String),
    #[error("line {line}: unknown class '{class}'")]
    UnknownClass { line: usize, class: String },
    #[error("class '{class}': unknown parameter '{name}'")]
    UnknownParam { class: String, name: String },
    #[error("class '{class}', parameter '{name}': wrong kind")]
    ParamKindMismatch { class: String, name: String },
    #[error("class '{class}': required slot '{slot}' is empty")]
    MissingRequiredSlot { class: String, slot: String },
    #[error("object {0} is referenced before its definition (cycles are impossible in a valid file)")]
    CycleDetected(u64),
    #[error("reference to undefined object {0}")]
    DanglingReference(u64),
    #[error("slot '{slot}' expects a different class, found '{class}'")]
    WrongSlotClass { slot: String, class: String },
    #[error("config needs exactly one object with \"root\": true, found {0}")]
    RootCount(usize),
    #[error("line {0}: {1}")]
    Parse(usize, String),
    #[error(transparent)]
    Props(#[from] PropsError),
}

#[derive(Debug, Default)]
pub struct Registry {
    specs: BTreeMap<String, ConfigurableSpec>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, spec: ConfigurableSpec) -> Result<(), ConfigError> {
        if self.specs.contains_key(&spec.class_name) {
            return Err(ConfigError::DuplicateClass(spec.class_name));
        }
        self.specs.insert(spec.class_name.clone(), spec);
        Ok(())
    }

    pub fn contains(&self, class_name: &str) -> bool {
        self.specs.contains_key(class_name)
    }

    pub fn spec(&self, class_name: &str) -> Option<&ConfigurableSpec> {
        self.specs.get(class_name)
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn class_names(&self) -> impl Iterator<Item = &str> {
        self.specs.keys().map(String::as_str)
    }

    /// All built-in processing classes.
    pub fn builtin() -> Registry {
        let mut reg = Registry::new();
        let mut add = |class: &str, params: &[(&str, PropertyValue)], slots: &[(&str, bool, bool)]| {
            let mut defaults = PropertyContainer::new();
            for (name, value) in params {
                defaults
                    .put(name, value.clone())
                    .expect("builtin defaults are well-formed");
            }
            reg.register(ConfigurableSpec {
                class_name: class.into(),
                defaults,
                slots: slots
                    .iter()
                    .map(|(name, required, multi)| SlotSpec {
                        name: name.to_string(),
                        required: *required,
                        multi: *multi,
                    })
                    .collect(),
            })
            .expect("builtin classes registered once");
        };
        use PropertyValue as V;
        add(
            "Pipeline",
            &[],
            &[
                ("assembler", true, false),
                ("tracker", true, false),
                ("graph", true, false),
            ],
        );
        add(
            "PacketAssembler",
            &[
                ("primary_topic", V::Str("front_scan".into())),
                ("sync_window", V::Float(0.05)),
            ],
            &[("preprocessors", true, true), ("odometry", false, false)],
        );
        add(
            "LaserScanPreprocessor",
            &[
                ("topic", V::Str("front_scan".into())),
                ("extrinsics", V::Pose2(crate::geometry::Pose2::identity())),
                ("voxel", V::Float(0.025)),
                ("normal_k", V::Int(8)),
            ],
            &[],
        );
        add("OdometryPreprocessor", &[], &[]);
        add(
            "MultiAligner",
            &[
                ("outer_iterations", V::Int(10)),
                ("gate_start", V::Float(0.5)),
                ("gate_end", V::Float(0.1)),
                ("normal_gate", V::Float(1.0)),
                ("min_inliers", V::Int(10)),
                ("cond_threshold", V::Float(1e8)),
                ("huber_delta", V::Float(0.2)),
            ],
            &[("slices", true, true), ("solver", true, false)],
        );
        add(
            "RobustSolver",
            &[
                ("max_iterations", V::Int(10)),
                ("damping", V::Float(1e-6)),
                ("chi2_epsilon", V::Float(1e-9)),
                ("dense_threshold", V::Int(300)),
            ],
            &[],
        );
        add("LidarAlignerSlice", &[("topic", V::Str("front_scan".into()))], &[]);
        add(
            "OdometryAlignerSlice",
            &[("information", V::FloatVec(vec![100.0, 100.0, 400.0]))],
            &[],
        );
        add(
            "MultiTracker",
            &[],
            &[
                ("aligner", true, false),
                ("merger", true, false),
                ("clipper", true, false),
                ("splitter", true, false),
            ],
        );
        add(
            "MapMerger",
            &[("voxel", V::Float(0.05)), ("cap", V::Int(20_000))],
            &[],
        );
        add("MapClipper", &[("radius", V::Float(15.0))], &[]);
        add(
            "LocalMapSplitter",
            &[("t_trans", V::Float(1.0)), ("t_rot", V::Float(0.5))],
            &[],
        );
        add(
            "LoopDetector",
            &[("search_radius", V::Float(3.0)), ("exclude_last", V::Int(5))],
            &[],
        );
        add(
            "LoopValidator",
            &[
                ("min_inlier_ratio", V::Float(0.5)),
                ("max_mean_residual", V::Float(0.1)),
                ("max_correction_trans", V::Float(2.0)),
                ("max_correction_rot", V::Float(1.0)),
                ("info_scale_min", V::Float(0.1)),
                ("info_scale_max", V::Float(10.0)),
            ],
            &[("aligner", true, false)],
        );
        add(
            "GraphSlam",
            &[
                ("odom_information", V::FloatVec(vec![100.0, 100.0, 400.0])),
                ("optimize_on_loop", V::Bool(true)),
            ],
            &[
                ("solver", true, false),
                ("loop_detector", false, false),
                ("loop_validator", false, false),
            ],
        );
        reg
    }
}

/// A config object with defaults merged in and slots resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedObject {
    pub id: u64,
    pub class_name: String,
    pub params: PropertyContainer,
    /// (slot name, referenced ids) in spec order, filled slots only.
    pub slots: Vec<(String, Vec<u64>)>,
    pub root: bool,
}

impl NormalizedObject {
    fn slot(&self, name: &str) -> Option<&[u64]> {
        self.slots
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, ids)| ids.as_slice())
    }
}

/// Graph-SLAM back-end settings produced by instantiation.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSettings {
    pub odom_information: Matrix3<f64>,
    pub solve: SolveSettings,
    pub optimize_on_loop: bool,
    /// Present when both a loop detector and validator are configured.
    pub loops: Option<(LoopConfig, AlignConfig)>,
}

/// The fully-built processing pipeline plus its normalized config, which
/// [`write_config`] re-emits losslessly.
#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub assembly: AssemblyParams,
    pub tracker: TrackerConfig,
    pub graph: GraphSettings,
    normalized: Vec<NormalizedObject>,
}

fn parse_objects(text: &str) -> Result<Vec<(usize, SerializedObject)>, ConfigError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push((i + 1, SerializedObject::from_line(i + 1, line)?));
    }
    Ok(out)
}

fn check_ref(
    id: u64,
    defined: &BTreeMap<u64, usize>,
    all_ids: &BTreeMap<u64, usize>,
) -> Result<(), ConfigError> {
    if defined.contains_key(&id) {
        Ok(())
    } else if all_ids.contains_key(&id) {
        Err(ConfigError::CycleDetected(id))
    } else {
        Err(ConfigError::DanglingReference(id))
    }
}

/// Parses and validates a config against the registry: defaults merged,
/// unknown parameters rejected, slot references resolved (references must
/// point at earlier lines).
pub fn normalize(registry: &Registry, text: &str) -> Result<Vec<NormalizedObject>, ConfigError> {
    let objects = parse_objects(text)?;
    let all_ids: BTreeMap<u64, usize> = objects.iter().map(|(l, o)| (o.id, *l)).collect();
    let mut defined: BTreeMap<u64, usize> = BTreeMap::new();
    let mut normalized = Vec::new();
    for (index, (line, obj)) in objects.iter().enumerate() {
        let spec = registry
            .spec(&obj.class_name)
            .ok_or_else(|| ConfigError::UnknownClass {
                line: *line,
                class: obj.class_name.clone(),
            })?;
        let mut params = spec.defaults.clone();
        let mut slots: Vec<(String, Vec<u64>)> = Vec::new();
        let mut root = false;
        for (name, value) in &obj.fields {
            if name == "root" {
                root = value.as_bool().unwrap_or(false);
                continue;
            }
            if let Some(slot_spec) = spec.slots.iter().find(|s| &s.name == name) {
                let ids: Vec<u64> = if slot_spec.multi {
                    value
                        .as_array()
                        .ok_or_else(|| {
                            ConfigError::Parse(*line, format!("slot '{name}' expects an id list"))
                        })?
                        .iter()
                        .map(|v| {
                            v.as_u64().ok_or_else(|| {
                                ConfigError::Parse(*line, format!("slot '{name}': bad id"))
                            })
                        })
                        .collect::<Result<_, _>>()?
                } else {
                    vec![value.get("ref").and_then(Value::as_u64).ok_or_else(|| {
                        ConfigError::Parse(*line, format!("slot '{name}' expects {{\"ref\": id}}"))
                    })?]
                };
                for id in &ids {
                    check_ref(*id, &defined, &all_ids)?;
                }
                slots.push((name.clone(), ids));
                continue;
            }
            if !params.contains(name) {
                return Err(ConfigError::UnknownParam {
                    class: obj.class_name.clone(),
                    name: name.clone(),
                });
            }
            let parsed = value_from_json(value, &BTreeMap::new()).map_err(|_| {
                ConfigError::ParamKindMismatch {
                    class: obj.class_name.clone(),
                    name: name.clone(),
                }
            })?;
            params
                .put(name, parsed)
                .map_err(|_| ConfigError::ParamKindMismatch {
                    class: obj.class_name.clone(),
                    name: name.clone(),
                })?;
        }
        for slot_spec in &spec.slots {
            if slot_spec.required && !slots.iter().any(|(n, _)| n == &slot_spec.name) {
                return Err(ConfigError::MissingRequiredSlot {
                    class: obj.class_name.clone(),
                    slot: slot_spec.name.clone(),
                });
            }
        }
        // Keep slot order stable: spec order, not file order.
        slots.sort_by_key(|(n, _)| spec.slots.iter().position(|s| &s.name == n));
        defined.insert(obj.id, index);
        normalized.push(NormalizedObject {
            id: obj.id,
            class_name: obj.class_name.clone(),
            params,
            slots,
            root,
        });
    }
    Ok(normalized)
}

struct Builder<'a> {
    by_id: BTreeMap<u64, &'a NormalizedObject>,
}

impl<'a> Builder<'a> {
    fn object(&self, id: u64) -> &'a NormalizedObject {
        self.by_id[&id]
    }

    fn expect_class(&self, slot: &str, id: u64, class: &str) -> Result<&'a NormalizedObject, ConfigError> {
        let obj = self.object(id);
        if obj.class_name != class {
            return Err(ConfigError::WrongSlotClass {
                slot: slot.into(),
                class: obj.class_name.clone(),
            });
        }
        Ok(obj)
    }

    fn solver(&self, slot: &str, id: u64) -> Result<SolveSettings, ConfigError> {
        let obj = self.expect_class(slot, id, "RobustSolver")?;
        Ok(SolveSettings {
            max_iterations: obj.params.get_int("max_iterations")? as usize,
            damping: obj.params.get_float("damping")?,
            chi2_epsilon: obj.params.get_float("chi2_epsilon")?,
            dense_threshold: obj.params.get_int("dense_threshold")? as usize,
        })
    }

    fn aligner(&self, slot: &str, id: u64) -> Result<AlignConfig, ConfigError> {
        let obj = self.expect_class(slot, id, "MultiAligner")?;
        let mut cfg = AlignConfig {
            scan_topics: Vec::new(),
            use_odometry: false,
            outer_iterations: obj.params.get_int("outer_iterations")? as usize,
            gate_start: obj.params.get_float("gate_start")?,
            gate_end: obj.params.get_float("gate_end")?,
            normal_gate: obj.params.get_float("normal_gate")?,
            min_inliers: obj.params.get_int("min_inliers")? as usize,
            cond_threshold: obj.params.get_float("cond_threshold")?,
            huber_delta: obj.params.get_float("huber_delta")?,
            ..AlignConfig::default()
        };
        for &slice_id in obj.slot("slices").unwrap_or(&[]) {
            let slice = self.object(slice_id);
            match slice.class_name.as_str() {
                "LidarAlignerSlice" => {
                    cfg.scan_topics.push(slice.params.get_str("topic")?.to_string());
                }
                "OdometryAlignerSlice" => {
                    cfg.use_odometry = true;
                    cfg.odom_information = diag3(&slice.params, "information")?;
                }
                other => {
                    return Err(ConfigError::WrongSlotClass {
                        slot: "slices".into(),
                        class: other.to_string(),
                    })
                }
            }
        }
        cfg.solve = self.solver("solver", obj.slot("solver").unwrap()[0])?;
        Ok(cfg)
    }

    fn assembler(&self, slot: &str, id: u64) -> Result<AssemblyParams, ConfigError> {
        let obj = self.expect_class(slot, id, "PacketAssembler")?;
        let mut extrinsics = Vec::new();
        let mut preprocess = PreprocessParams::default();
        for (i, &pre_id) in obj.slot("preprocessors").unwrap_or(&[]).iter().enumerate() {
            let pre = self.expect_class("preprocessors", pre_id, "LaserScanPreprocessor")?;
            extrinsics.push(SensorExtrinsics {
                topic: pre.params.get_str("topic")?.to_string(),
                sensor_in_base: pre.params.get_pose2("extrinsics")?,
            });
            if i == 0 {
                preprocess = PreprocessParams {
                    voxel: pre.params.get_float("voxel")?,
                    normal_k: pre.params.get_int("normal_k")? as usize,
                };
            }
        }
        let use_odometry = match obj.slot("odometry") {
            Some(ids) => {
                self.expect_class("odometry", ids[0], "OdometryPreprocessor")?;
                true
            }
            None => false,
        };
        Ok(AssemblyParams {
            primary_topic: obj.params.get_str("primary_topic")?.to_string(),
            sync_window: obj.params.get_float("sync_window")?,
            extrinsics,
            preprocess,
            use_odometry,
        })
    }

    fn tracker(&self, slot: &str, id: u64) -> Result<TrackerConfig, ConfigError> {
        let obj = self.expect_class(slot, id, "MultiTracker")?;
        let merger = self.expect_class("merger", obj.slot("merger").unwrap()[0], "MapMerger")?;
        let clipper = self.expect_class("clipper", obj.slot("clipper").unwrap()[0], "MapClipper")?;
        let splitter =
            self.expect_class("splitter", obj.slot("splitter").unwrap()[0], "LocalMapSplitter")?;
        Ok(TrackerConfig {
            align: self.aligner("aligner", obj.slot("aligner").unwrap()[0])?,
            split: SplitThresholds {
                t_trans: splitter.params.get_float("t_trans")?,
                t_rot: splitter.params.get_float("t_rot")?,
            },
            merge: MergeParams {
                voxel: merger.params.get_float("voxel")?,
                cap: merger.params.get_int("cap")? as usize,
            },
            clip_radius: clipper.params.get_float("radius")?,
        })
    }

    fn graph(&self, slot: &str, id: u64) -> Result<GraphSettings, ConfigError> {
        let obj = self.expect_class(slot, id, "GraphSlam")?;
        let loops = match (obj.slot("loop_detector"), obj.slot("loop_validator")) {
            (Some(det), Some(val)) => {
                let det = self.expect_class("loop_detector", det[0], "LoopDetector")?;
                let val = self.expect_class("loop_validator", val[0], "LoopValidator")?;
                let loop_cfg = LoopConfig {
                    search_radius: det.params.get_float("search_radius")?,
                    exclude_last: det.params.get_int("exclude_last")? as usize,
                    min_inlier_ratio: val.params.get_float("min_inlier_ratio")?,
                    max_mean_residual: val.params.get_float("max_mean_residual")?,
                    max_correction_trans: val.params.get_float("max_correction_trans")?,
                    max_correction_rot: val.params.get_float("max_correction_rot")?,
                    info_scale_min: val.params.get_float("info_scale_min")?,
                    info_scale_max: val.params.get_float("info_scale_max")?,
                };
                let loop_align = self.aligner("aligner", val.slot("aligner").unwrap()[0])?;
                Some((loop_cfg, loop_align))
            }
            _ => None,
        };
        Ok(GraphSettings {
            odom_information: diag3(&obj.params, "odom_information")?,
            solve: self.solver("solver", obj.slot("solver").unwrap()[0])?,
            optimize_on_loop: obj.params.get_bool("optimize_on_loop")?,
            loops,
        })
    }
}

fn diag3(params: &PropertyContainer, name: &str) -> Result<Matrix3<f64>, ConfigError> {
    let v = params.get_float_vec(name)?;
    if v.len() != 3 {
        return Err(ConfigError::ParamKindMismatch {
            class: String::new(),
            name: name.into(),
        });
    }
    Ok(Matrix3::from_diagonal(&Vector3::new(v[0], v[1], v[2])))
}

/// Builds the pipeline object tree described by a config file.
pub fn instantiate(registry: &Registry, text: &str) -> Result<Pipeline, ConfigError> {
    let normalized = normalize(registry, text)?;
    let roots: Vec<&NormalizedObject> = normalized.iter().filter(|o| o.root).collect();
    if roots.len() != 1 {
        return Err(ConfigError::RootCount(roots.len()));
    }
    let root = roots[0];
    let builder = Builder {
        by_id: normalized.iter().map(|o| (o.id, o)).collect(),
    };
    let root_obj = builder.expect_class("root", root.id, "Pipeline")?;
    let pipeline = Pipeline {
        assembly: builder.assembler("assembler", root_obj.slot("assembler").unwrap()[0])?,
        tracker: builder.tracker("tracker", root_obj.slot("tracker").unwrap()[0])?,
        graph: builder.graph("graph", root_obj.slot("graph").unwrap()[0])?,
        normalized: normalized.clone(),
    };
    Ok(pipeline)
}

/// Re-emits the pipeline's normalized config: every parameter explicit,
/// references before referrers, byte-stable across round trips.
pub fn write_config(pipeline: &Pipeline) -> String {
    let mut out = String::new();
    for obj in &pipeline.normalized {
        let mut fields = Map::new();
        for (name, value) in obj.params.iter() {
            fields.insert(name.to_string(), value_to_json(value, || unreachable!()));
        }
        for (name, ids) in &obj.slots {
            let multi = ids.len() != 1 || {
                // Single-entry multi slots still serialize as a list.
                Registry::builtin()
                    .spec(&obj.class_name)
                    .and_then(|s| s.slots.iter().find(|sl| &sl.name == name).map(|sl| sl.multi))
                    .unwrap_or(false)
            };
            let value = if multi {
                json!(ids)
            } else {
                json!({"ref": ids[0]})
            };
            fields.insert(name.to_string(), value);
        }
        if obj.root {
            fields.insert("root".into(), json!(true));
        }
        out.push_str(
            &SerializedObject {
                class_name: obj.class_name.clone(),
                id: obj.id,
                fields,
            }
            .to_line(),
        );
        out.push('\n');
    }
    out
}

/// Ready-made configs: "lidar-single", "lidar-dual", "lidar-dual-odom".
pub fn preset_config(name: &str) -> Option<String> {
    let (dual, odom) = match name {
        "lidar-single" => (false, false),
        "lidar-dual" => (true, false),
        "lidar-dual-odom" => (true, true),
        _ => return None,
    };
    let registry = Registry::builtin();
    let mut objects: Vec<NormalizedObject> = Vec::new();
    let mut next_id = 0u64;
    let mut emit = |class: &str,
                    overrides: &[(&str, PropertyValue)],
                    slots: Vec<(&str, Vec<u64>)>,
                    objects: &mut Vec<NormalizedObject>|
     -> u64 {
        let spec = registry.spec(class).expect("preset uses builtin classes");
        let mut params = spec.defaults.clone();
        for (name, value) in overrides {
            params.put(name, value.clone()).expect("preset overrides are well-kinded");
        }
        let id = next_id;
        next_id += 1;
        objects.push(NormalizedObject {
            id,
            class_name: class.into(),
            params,
            slots: slots.into_iter().map(|(n, ids)| (n.to_string(), ids)).collect(),
            root: false,
        });
        id
    };
    use PropertyValue as V;
    let rear_pose = V::Pose2(crate::geometry::Pose2::new(0.0, 0.0, std::f64::consts::PI));

    let solver = emit("RobustSolver", &[], vec![], &mut objects);
    let mut preprocessors = vec![emit("LaserScanPreprocessor", &[], vec![], &mut objects)];
    let mut slices = vec![emit("LidarAlignerSlice", &[], vec![], &mut objects)];
    if dual {
        preprocessors.push(emit(
            "LaserScanPreprocessor",
            &[("topic", V::Str("rear_scan".into())), ("extrinsics", rear_pose)],
            vec![],
            &mut objects,
        ));
        slices.push(emit(
            "LidarAlignerSlice",
            &[("topic", V::Str("rear_scan".into()))],
            vec![],
            &mut objects,
        ));
    }
    let scan_slices = slices.clone();
    let mut assembler_slots = vec![("preprocessors", preprocessors)];
    if odom {
        let odo_pre = emit("OdometryPreprocessor", &[], vec![], &mut objects);
        assembler_slots.push(("odometry", vec![odo_pre]));
        slices.push(emit("OdometryAlignerSlice", &[], vec![], &mut objects));
    }
    let assembler = emit("PacketAssembler", &[], assembler_slots, &mut objects);
    let aligner = emit(
        "MultiAligner",
        &[],
        vec![("slices", slices), ("solver", vec![solver])],
        &mut objects,
    );
    let merger = emit("MapMerger", &[], vec![], &mut objects);
    let clipper = emit("MapClipper", &[], vec![], &mut objects);
    let splitter = emit("LocalMapSplitter", &[], vec![], &mut objects);
    let tracker = emit(
        "MultiTracker",
        &[],
        vec![
            ("aligner", vec![aligner]),
            ("merger", vec![merger]),
            ("clipper", vec![clipper]),
            ("splitter", vec![splitter]),
        ],
        &mut objects,
    );
    // Loop validation re-registers scenes with a scan-only aligner: an
    // odometry prior at the guess would drag the result toward the guess.
    let loop_aligner = emit(
        "MultiAligner",
        &[],
        vec![("slices", scan_slices), ("solver", vec![solver])],
        &mut objects,
    );
    let detector = emit("LoopDetector", &[], vec![], &mut objects);
    let validator = emit(
        "LoopValidator",
        &[],
        vec![("aligner", vec![loop_aligner])],
        &mut objects,
    );
    let graph = emit(
        "GraphSlam",
        &[],
        vec![
            ("solver", vec![solver]),
            ("loop_detector", vec![detector]),
            ("loop_validator", vec![validator]),
        ],
        &mut objects,
    );
    let root = emit(
        "Pipeline",
        &[],
        vec![
            ("assembler", vec![assembler]),
            ("tracker", vec![tracker]),
            ("graph", vec![graph]),
        ],
        &mut objects,
    );
    for obj in objects.iter_mut() {
        if obj.id == root {
            obj.root = true;
        }
    }
    let pipeline = Pipeline {
        assembly: AssemblyParams::default(),
        tracker: TrackerConfig::default(),
        graph: GraphSettings {
            odom_information: crate::graph::default_odometry_information(),
            solve: SolveSettings::default(),
            optimize_on_loop: true,
            loops: None,
        },
        normalized: objects,
    };
    Some(write_config(&pipeline))
}
