use crate::error::{Error, Result};

/// Architecture hyperparameters. Every parameter shape derives from these.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ArchConfig {
    /// Width of the initial convolution (`c0`).
    pub base_channels: usize,
    /// Bottleneck reduction of the channel-attention MLP.
    pub ca_reduction: usize,
    /// Side length of the square training crops.
    pub image_side: usize,
    /// Run the parallel attention block. When off, the encoder passes the last
    /// multi-kernel block's output straight through in its place. Not persisted.
    pub attention: bool,
}

impl ArchConfig {
    /// Full-size profile: 16 base channels, reduction 16, 224 pixel crops.
    pub fn paper() -> Self {
        Self {
            base_channels: 16,
            ca_reduction: 16,
            image_side: 224,
            attention: true,
        }
    }

    /// Desk-scale profile: 4 base channels, reduction 4, 64 pixel crops.
    pub fn toy() -> Self {
        Self {
            base_channels: 4,
            ca_reduction: 4,
            image_side: 64,
            attention: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels < 2 {
            return Err(Error::Config(format!(
                "base_channels must be at least 2, got {}",
                self.base_channels
            )));
        }
        if self.ca_reduction == 0 || self.attention_channels() % self.ca_reduction != 0 {
            return Err(Error::Config(format!(
                "ca_reduction {} must divide the attention width {}",
                self.ca_reduction,
                self.attention_channels()
            )));
        }
        if self.image_side == 0 {
            return Err(Error::Config("image_side must be positive".into()));
        }
        Ok(())
    }

    /// Per-branch width of multi-kernel block `block` (1-based): `2c0, 4c0, 8c0`.
    pub fn branch_width(&self, block: usize) -> usize {
        2 * self.base_channels << (block - 1)
    }

    /// Input channels of multi-kernel block `block`: `c0, 6c0, 12c0`.
    pub fn block_input(&self, block: usize) -> usize {
        match block {
            1 => self.base_channels,
            _ => self.block_output(block - 1),
        }
    }

    /// Output channels of multi-kernel block `block`: three concatenated branches.
    pub fn block_output(&self, block: usize) -> usize {
        3 * self.branch_width(block)
    }

    /// Channels seen by the attention block (`24c0`).
    pub fn attention_channels(&self) -> usize {
        24 * self.base_channels
    }

    /// Encoder output channels (`48c0`): residual path plus attention output.
    pub fn feature_channels(&self) -> usize {
        2 * self.attention_channels()
    }

    /// Channel trace of the decoder, input first: `48c0, 24c0, 12c0, 6c0, 3c0, 1`.
    pub fn decoder_channels(&self) -> [usize; 6] {
        let c0 = self.base_channels;
        [48 * c0, 24 * c0, 12 * c0, 6 * c0, 3 * c0, 1]
    }
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self::toy()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_size_channel_plan() {
        let a = ArchConfig::paper();
        assert_eq!(
            (1..=3).map(|b| a.branch_width(b)).collect::<Vec<_>>(),
            [32, 64, 128]
        );
        assert_eq!(
            (1..=3).map(|b| a.block_input(b)).collect::<Vec<_>>(),
            [16, 96, 192]
        );
        assert_eq!(
            (1..=3).map(|b| a.block_output(b)).collect::<Vec<_>>(),
            [96, 192, 384]
        );
        assert_eq!(a.decoder_channels(), [768, 384, 192, 96, 48, 1]);
    }

    #[test]
    fn validation_rules() {
        assert!(ArchConfig::toy().validate().is_ok());
        let mut a = ArchConfig::toy();
        a.base_channels = 1;
        assert!(a.validate().is_err());
        let mut a = ArchConfig::toy();
        a.ca_reduction = 5;
        assert!(matches!(a.validate(), Err(Error::Config(_))));
    }
}
