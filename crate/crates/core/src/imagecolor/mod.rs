//! Colour handling: conversions between sRGB and the three stain-augmentation
//! spaces (CIE L*a*b*, HSV, HED), per-channel statistics, Reinhard transfer,
//! RandStainNA and conventional colour jitter.

mod convert;
mod jitter;
mod stain;

pub use convert::{
    convert, convert_back, hed_from_rgb, hed_to_rgb, hsv_to_rgb, lab_to_rgb, rgb_from_hed, rgb_to_hed,
    rgb_to_hsv, rgb_to_lab, to_patch, invert3, ColorSpace, HED_OD_FLOOR, STAIN_VECTORS,
};
pub use jitter::{apply_jitter_op, color_jitter, JitterOp, JitterStrength};
pub use stain::{
    channel_stats, fit_template, randstainna, randstainna_with_space, reinhard_transfer,
    stats_of_values, ChannelFit, ColorStats, StainTemplate, REINHARD_STD_FLOOR,
};
