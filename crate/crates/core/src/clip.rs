use std::fmt;

/// Ground-truth corruption applied to a frame by the data generator.
///
/// Flags are carried for evaluation only; the model never reads them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum FrameFlag {
    #[default]
    Clean,
    Occluded,
    Misaligned,
    IdSwitch,
}

impl FrameFlag {
    pub const ALL: [FrameFlag; 4] = [
        FrameFlag::Clean,
        FrameFlag::Occluded,
        FrameFlag::Misaligned,
        FrameFlag::IdSwitch,
    ];

    /// One-letter code used in manifests.
    pub fn code(self) -> char {
        match self {
            FrameFlag::Clean => 'c',
            FrameFlag::Occluded => 'o',
            FrameFlag::Misaligned => 'm',
            FrameFlag::IdSwitch => 's',
        }
    }

    pub fn from_code(c: char) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.code() == c)
    }

    pub fn name(self) -> &'static str {
        match self {
            FrameFlag::Clean => "clean",
            FrameFlag::Occluded => "occluded",
            FrameFlag::Misaligned => "misaligned",
            FrameFlag::IdSwitch => "id_switch",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == s)
    }

    pub fn is_clean(self) -> bool {
        self == FrameFlag::Clean
    }
}

impl fmt::Display for FrameFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One image, channel-major (`C×H×W`), values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub pixels: Vec<f32>,
}

impl Frame {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f32>) -> Self {
        assert_eq!(pixels.len(), height * width * channels, "frame pixel count");
        Self {
            height,
            width,
            channels,
            pixels,
        }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// Per-pixel mean over channels, row-major `H·W`.
    pub fn channel_mean(&self) -> Vec<f32> {
        let plane = self.height * self.width;
        if self.channels == 1 {
            return self.pixels.clone();
        }
        (0..plane)
            .map(|i| {
                let s: f32 = (0..self.channels).map(|c| self.pixels[c * plane + i]).sum();
                s / self.channels as f32
            })
            .collect()
    }
}

/// A fixed-length window of a tracklet.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub id: usize,
    pub tracklet: usize,
    pub identity: usize,
    pub camera: usize,
    pub frames: Vec<Frame>,
    pub flags: Vec<FrameFlag>,
}

impl Clip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn is_clean(&self) -> bool {
        self.flags.iter().all(|f| f.is_clean())
    }
}
