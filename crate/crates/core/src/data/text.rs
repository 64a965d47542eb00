use unicode_normalization::UnicodeNormalization;

/// NFC-normalizes ground truth, collapses whitespace runs to one space and trims.
pub fn normalize_text(text: &str) -> String {
    let composed: String = text.nfc().collect();
    composed.split_whitespace().collect::<Vec<_>>().join(" ")
}
