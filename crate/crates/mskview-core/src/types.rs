//! Shared domain enums: acquisition planes and classification tasks.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// MRI acquisition plane. Each plane is one "view" of an exam and gets its
/// own model per task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    Axial,
    Coronal,
    Sagittal,
}

impl Plane {
    pub const ALL: [Plane; 3] = [Plane::Axial, Plane::Coronal, Plane::Sagittal];

    pub fn as_str(&self) -> &'static str {
        match self {
            Plane::Axial => "axial",
            Plane::Coronal => "coronal",
            Plane::Sagittal => "sagittal",
        }
    }
}

impl fmt::Display for Plane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Plane {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "axial" => Ok(Plane::Axial),
            "coronal" => Ok(Plane::Coronal),
            "sagittal" => Ok(Plane::Sagittal),
            other => Err(format!("unknown plane: {other}")),
        }
    }
}

/// Binary classification task. `Abnormal` is the coarse any-abnormality
/// label; the two tear tasks are nested inside it in the clinical data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Abnormal,
    Acl,
    Meniscus,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Abnormal, Task::Acl, Task::Meniscus];

    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Abnormal => "abnormal",
            Task::Acl => "acl",
            Task::Meniscus => "meniscus",
        }
    }

    /// Display name used in report rows.
    pub fn display_name(&self) -> &'static str {
        match self {
            Task::Abnormal => "Abnormal",
            Task::Acl => "ACL",
            Task::Meniscus => "Meniscus",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "abnormal" => Ok(Task::Abnormal),
            "acl" => Ok(Task::Acl),
            "meniscus" => Ok(Task::Meniscus),
            other => Err(format!("unknown task: {other}")),
        }
    }
}

/// One value per task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerTask<T> {
    pub abnormal: T,
    pub acl: T,
    pub meniscus: T,
}

impl<T> PerTask<T> {
    pub fn get(&self, task: Task) -> &T {
        match task {
            Task::Abnormal => &self.abnormal,
            Task::Acl => &self.acl,
            Task::Meniscus => &self.meniscus,
        }
    }

    pub fn get_mut(&mut self, task: Task) -> &mut T {
        match task {
            Task::Abnormal => &mut self.abnormal,
            Task::Acl => &mut self.acl,
            Task::Meniscus => &mut self.meniscus,
        }
    }
}

impl<T: Clone> PerTask<T> {
    pub fn uniform(value: T) -> Self {
        PerTask {
            abnormal: value.clone(),
            acl: value.clone(),
            meniscus: value,
        }
    }
}

/// One value per plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerPlane<T> {
    pub axial: T,
    pub coronal: T,
    pub sagittal: T,
}

impl<T> PerPlane<T> {
    pub fn get(&self, plane: Plane) -> &T {
        match plane {
            Plane::Axial => &self.axial,
            Plane::Coronal => &self.coronal,
            Plane::Sagittal => &self.sagittal,
        }
    }

    pub fn get_mut(&mut self, plane: Plane) -> &mut T {
        match plane {
            Plane::Axial => &mut self.axial,
            Plane::Coronal => &mut self.coronal,
            Plane::Sagittal => &mut self.sagittal,
        }
    }
}

/// Dataset split names following the MRNet distribution layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            other => Err(format!("unknown split: {other}")),
        }
    }
}

/// Format exam ids the way the MRNet CSVs do.
pub fn format_exam_id(index: usize) -> String {
    format!("{index:04}")
}
