from .corpus import CorpusManifest, Entry, ManifestError, expected_corpus_size, forge_corpus, style_key
from .glyphs import (
    DEFAULT_CONTENT_FONT,
    InvalidCanvasError,
    MissingGlyphError,
    from_uint8,
    has_glyph,
    load_image,
    quantize,
    render_glyph,
    resolve_font,
    save_image,
    to_grayscale,
    to_uint8,
)
from .sampling import (
    InsufficientCharactersError,
    StyleInput,
    StyleReferenceSet,
    sample_reference_set,
    sample_style_input,
    unstack,
)
from .textures import InvalidTextureError, TextureSpec, apply_texture, texture_presets
