"""Fixed caption templates."""

ZERO_SHOT_TEMPLATE = "A person is speaking in a {label} style"

# Six paraphrase templates per tag, rendered into a corpus's paraphrase bank.
DEFAULT_PARAPHRASE_TEMPLATES = (
    "a {tag} voice",
    "the speaker sounds {tag}",
    "someone talking in a {tag} manner",
    "speech with a {tag} quality",
    "a person whose voice is {tag}",
    "this recording has a {tag} tone",
)

PLANTED_CAPTION_TEMPLATE = "a speaker with a {tags} voice"


def render_caption(template: str, tag_names) -> str:
    return template.format(tags=" and ".join(tag_names))
