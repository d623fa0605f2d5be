//! Slice-encoder registry: three ImageNet-era architecture families plus a
//! deliberately small `tiny` family for fast deterministic tests.
//!
//! Every encoder ends in global average pooling, so any input size large
//! enough to survive the downsampling chain produces a fixed-length feature
//! vector: 256 (alexnet-style), 512 (resnet18-style), 1024 (googlenet-style),
//! 16 (tiny).

use super::{Block, Conv2d};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Tiny,
    AlexnetStyle,
    Resnet18Style,
    GooglenetStyle,
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::Tiny,
        Family::AlexnetStyle,
        Family::Resnet18Style,
        Family::GooglenetStyle,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Tiny => "tiny",
            Family::AlexnetStyle => "alexnet-style",
            Family::Resnet18Style => "resnet18-style",
            Family::GooglenetStyle => "googlenet-style",
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            Family::Tiny => 16,
            Family::AlexnetStyle => 256,
            Family::Resnet18Style => 512,
            Family::GooglenetStyle => 1024,
        }
    }

    /// Pretrained ImageNet weights exist only for the three named families.
    pub fn supports_pretrained(&self) -> bool {
        !matches!(self, Family::Tiny)
    }

    /// Display name used in report rows.
    pub fn display_name(&self) -> &'static str {
        match self {
            Family::Tiny => "Tiny",
            Family::AlexnetStyle => "AlexNet",
            Family::Resnet18Style => "ResNet-18",
            Family::GooglenetStyle => "GoogLeNet",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tiny" => Ok(Family::Tiny),
            "alexnet-style" | "alexnet" => Ok(Family::AlexnetStyle),
            "resnet18-style" | "resnet18" => Ok(Family::Resnet18Style),
            "googlenet-style" | "googlenet" => Ok(Family::GooglenetStyle),
            other => Err(format!("unknown backbone family: {other}")),
        }
    }
}

/// Build an encoder with He-initialized weights drawn from `rng`, with conv
/// ids already assigned. Returns the block tree and its feature dimension.
pub fn build_encoder(family: Family, rng: &mut impl Rng) -> (Block, usize) {
    let mut block = match family {
        Family::Tiny => tiny(rng),
        Family::AlexnetStyle => alexnet_style(rng),
        Family::Resnet18Style => resnet18_style(rng),
        Family::GooglenetStyle => googlenet_style(rng),
    };
    let mut next = 0;
    block.assign_ids(&mut next);
    (block, family.feature_dim())
}

fn conv(c_in: usize, c_out: usize, k: usize, s: usize, p: usize, rng: &mut impl Rng) -> Block {
    Block::Conv(Conv2d::new(c_in, c_out, k, s, p, rng))
}

fn pool(k: usize, s: usize, p: usize) -> Block {
    Block::MaxPool {
        kernel: k,
        stride: s,
        padding: p,
    }
}

/// 3 conv blocks, aggressive first stride so even 224-pixel inputs stay
/// cheap. Accepts inputs down to 8x8.
fn tiny(rng: &mut impl Rng) -> Block {
    Block::Seq(vec![
        conv(3, 8, 3, 8, 1, rng),
        Block::Relu,
        conv(8, 16, 3, 2, 1, rng),
        Block::Relu,
        conv(16, 16, 3, 2, 1, rng),
        Block::Relu,
        Block::GlobalAvgPool,
    ])
}

/// Five convolutional stages in the AlexNet layout, 256 final channels.
fn alexnet_style(rng: &mut impl Rng) -> Block {
    Block::Seq(vec![
        conv(3, 64, 11, 4, 2, rng),
        Block::Relu,
        pool(3, 2, 0),
        conv(64, 192, 5, 1, 2, rng),
        Block::Relu,
        pool(3, 2, 0),
        conv(192, 384, 3, 1, 1, rng),
        Block::Relu,
        conv(384, 256, 3, 1, 1, rng),
        Block::Relu,
        conv(256, 256, 3, 1, 1, rng),
        Block::Relu,
        pool(3, 2, 0),
        Block::GlobalAvgPool,
    ])
}

fn basic_block(c_in: usize, c_out: usize, stride: usize, rng: &mut impl Rng) -> Block {
    let shortcut = if stride != 1 || c_in != c_out {
        Some(Box::new(conv(c_in, c_out, 1, stride, 0, rng)))
    } else {
        None
    };
    Block::Residual {
        main: Box::new(Block::Seq(vec![
            conv(c_in, c_out, 3, stride, 1, rng),
            Block::Relu,
            conv(c_out, c_out, 3, 1, 1, rng),
        ])),
        shortcut,
    }
}

/// Four residual stages of two basic blocks each, 512 final channels.
fn resnet18_style(rng: &mut impl Rng) -> Block {
    Block::Seq(vec![
        conv(3, 64, 7, 2, 3, rng),
        Block::Relu,
        pool(3, 2, 1),
        basic_block(64, 64, 1, rng),
        basic_block(64, 64, 1, rng),
        basic_block(64, 128, 2, rng),
        basic_block(128, 128, 1, rng),
        basic_block(128, 256, 2, rng),
        basic_block(256, 256, 1, rng),
        basic_block(256, 512, 2, rng),
        basic_block(512, 512, 1, rng),
        Block::GlobalAvgPool,
    ])
}

#[allow(clippy::too_many_arguments)]
fn inception(
    c_in: usize,
    c1: usize,
    c3r: usize,
    c3: usize,
    c5r: usize,
    c5: usize,
    cp: usize,
    rng: &mut impl Rng,
) -> Block {
    Block::Concat(vec![
        Block::Seq(vec![conv(c_in, c1, 1, 1, 0, rng), Block::Relu]),
        Block::Seq(vec![
            conv(c_in, c3r, 1, 1, 0, rng),
            Block::Relu,
            conv(c3r, c3, 3, 1, 1, rng),
            Block::Relu,
        ]),
        Block::Seq(vec![
            conv(c_in, c5r, 1, 1, 0, rng),
            Block::Relu,
            conv(c5r, c5, 3, 1, 1, rng),
            Block::Relu,
        ]),
        Block::Seq(vec![pool(3, 1, 1), conv(c_in, cp, 1, 1, 0, rng), Block::Relu]),
    ])
}

/// Inception stack in the GoogLeNet layout, 1024 final channels. Auxiliary
/// classifier branches are omitted; only the trunk feeds the task head.
fn googlenet_style(rng: &mut impl Rng) -> Block {
    Block::Seq(vec![
        conv(3, 64, 7, 2, 3, rng),
        Block::Relu,
        pool(3, 2, 1),
        conv(64, 64, 1, 1, 0, rng),
        Block::Relu,
        conv(64, 192, 3, 1, 1, rng),
        Block::Relu,
        pool(3, 2, 1),
        inception(192, 64, 96, 128, 16, 32, 32, rng),
        inception(256, 128, 128, 192, 32, 96, 64, rng),
        pool(3, 2, 1),
        inception(480, 192, 96, 208, 16, 48, 64, rng),
        inception(512, 160, 112, 224, 24, 64, 64, rng),
        inception(512, 128, 128, 256, 24, 64, 64, rng),
        inception(512, 112, 144, 288, 32, 64, 64, rng),
        inception(528, 256, 160, 320, 32, 128, 128, rng),
        pool(3, 2, 1),
        inception(832, 256, 160, 320, 32, 128, 128, rng),
        inception(832, 384, 192, 384, 48, 128, 128, rng),
        Block::GlobalAvgPool,
    ])
}
