#!/usr/bin/env python3
"""Regenerates the shipped rule table and scripted fixtures.

    python3 scripts/gen_data.py

Writes crates/core/data/rules.json and crates/core/data/fixtures/scripted_{a,b}.json.
The outputs are committed; rerun only after editing the tables below.
"""

import json
import math
import os

ROOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "crates", "core", "data")

SCENES = {
    "gallery": {
        "primary_activity": "viewing artworks",
        "main_scene": "A spacious virtual art gallery with paintings along quiet halls",
        "placement": "along the upper edges of the halls, above the artworks",
    },
    "sports": {
        "primary_activity": "watching the table tennis match",
        "main_scene": "A virtual table tennis arena with spectators filling the stands",
        "placement": "over the upper stands, away from the playing area",
    },
    "concert": {
        "primary_activity": "watching the live performance",
        "main_scene": "A concert stage with an audience under stage lighting",
        "placement": "above the audience, clear of the stage",
    },
    "*": {
        "primary_activity": None,
        "main_scene": "{{scene_description}}",
        "placement": "at the periphery of the scene",
    },
}

TONES = {
    "warm": ["warm golden and amber tones", "lively saturated colors"],
    "cool": ["cool blue and silver tones", "soft muted colors"],
    "neutral": ["balanced neutral tones", "even soft light"],
}

# (family, intensity) -> rule content. `orient` is None when no orientational cue applies.
RULES = {
    ("positive-activated", "high"): dict(
        rng="elation, enthusiasm, excitement", tone="warm",
        es=("sparkling lights", "shimmering and flickering in quick bursts", "joy as a luminous substance filling the air"),
        orient=("upward-rising wisps of light", "rising steadily upward", "up is energetic, so rising motion carries the high arousal")),
    ("positive-activated", "medium"): dict(
        rng="cheerful interest, pleasant alertness", tone="warm",
        es=("gently shimmering lights", "a slow, even shimmer", "pleasure as a soft luminous substance"), orient=None),
    ("positive-activated", "low"): dict(
        rng="quiet pleasure", tone="warm",
        es=("soft glowing lights", "a faint, steady glow", "pleasure as a gentle glowing substance"),
        orient=("lights drifting slowly upward", "drifting upward at a slow pace", "mild upward motion signals a light, positive lift")),
    ("positive-deactivated", "low"): dict(
        rng="contentment, serenity, relaxation", tone="cool",
        es=("drifting pale-blue clouds", "floating lazily", "calm as a soft, weightless substance"),
        orient=("clouds resting low and level near the floor", "settled, barely moving", "low, level placement expresses rest and low activation")),
    ("positive-deactivated", "medium"): dict(
        rng="calm satisfaction", tone="cool",
        es=("soft pale-blue clouds", "slowly changing shape", "ease as a soft cloud-like substance"), orient=None),
    ("positive-deactivated", "high"): dict(
        rng="relaxed delight", tone="cool",
        es=("luminous pale clouds", "glowing softly", "delight as a bright but gentle substance"),
        orient=("clouds lifting gently upward", "rising slowly", "upward drift hints at rising energy")),
    ("negative-activated", "high"): dict(
        rng="distress, tension, alarm", tone="warm",
        es=("crackling red sparks", "jittering in erratic bursts", "tension as an unstable, crackling substance"),
        orient=("sparks pressing inward from the edges", "converging toward the center", "inward pressure conveys being hemmed in by strain")),
    ("negative-activated", "medium"): dict(
        rng="unease, irritation", tone="warm",
        es=("restless dark smoke", "curling restlessly", "unease as a drifting, murky substance"), orient=None),
    ("negative-activated", "low"): dict(
        rng="simmering discomfort", tone="warm",
        es=("smoldering embers", "pulsing dimly", "discomfort as a low, smoldering heat"),
        orient=("embers sinking downward", "sinking slowly", "downward motion signals fading energy")),
    ("negative-deactivated", "low"): dict(
        rng="sadness, melancholy, fatigue", tone="cool",
        es=("a faint, lingering blue mist", "slowly dissipating", "sadness as a diffuse, weightless substance"),
        orient=("mist sinking downward below eye level", "downward, settling and sinking", "down is heavy and sad, so the mist sinks below eye level")),
    ("negative-deactivated", "medium"): dict(
        rng="weariness, mild gloom", tone="cool",
        es=("thin grey mist", "hanging still", "gloom as a thin, pervasive substance"), orient=None),
    ("negative-deactivated", "high"): dict(
        rng="agitated gloom", tone="cool",
        es=("swirling grey mist", "swirling unevenly", "gloom as a restless substance"),
        orient=("mist spiraling upward and fraying", "rising and fraying apart", "upward fraying shows energy without comfort")),
}
NEUTRAL = dict(
    rng="calm, neutral state", tone="neutral",
    es=("a thin, even ambient haze", "still", "a neutral state as a barely noticeable ambient substance"), orient=None)


def rule_entry(family, intensity, scene):
    r = NEUTRAL if family == "neutral" else RULES[(family, intensity)]
    s = SCENES[scene]
    es_desc, es_dyn, es_why = r["es"]
    types = [{"type": "Ontological_EntitySubstance", "rationale": es_why}]
    cues = [{"description": es_desc, "dynamics": es_dyn,
             "mapped_dimension": "both" if family == "neutral" else "valence"}]
    mapping = [{"state_aspect": f"valence: {r['rng']}", "cue_index": 0}]
    elements = [f"{es_desc} {s['placement']}"]
    if r["orient"]:
        o_desc, o_dyn, o_why = r["orient"]
        types.append({"type": "Orientational", "rationale": o_why})
        cues.append({"description": o_desc, "dynamics": o_dyn, "mapped_dimension": "arousal"})
        mapping.append({"state_aspect": f"arousal: {intensity} intensity", "cue_index": 1})
        elements.append(f"{o_desc}, {o_dyn}")
    tone_words = TONES[r["tone"]]
    return {
        "emotional_range": r["rng"],
        "tone": r["tone"],
        "metaphor_types": types,
        "visual_cues": cues,
        "mapping": mapping,
        "overall_description": f"{s['main_scene']}, with {es_desc} hovering {s['placement']}",
        "emotional_atmosphere": f"{r['rng']}, carried by {tone_words[0]}",
        "details": [f"{c['description']} ({c['dynamics']})" for c in cues] + tone_words,
        "main_scene": s["main_scene"],
        "metaphorical_elements": elements,
        "detailed_modifiers": tone_words + ["layered soft lighting", "equirectangular 360-degree panorama"],
    }


def gen_rules():
    entries = {}
    for family in ["positive-activated", "positive-deactivated", "negative-activated",
                   "negative-deactivated", "neutral"]:
        for intensity in ["low", "medium", "high"]:
            for scene in ["gallery", "sports", "concert", "*"]:
                entries[f"{family}|{intensity}|{scene}"] = rule_entry(family, intensity, scene)
    return {"version": "rules-v1", "entries": entries}


# --- scripted fixtures -------------------------------------------------------

OCTANTS = ["pleasure", "excitement", "arousal/alert", "distress", "misery",
           "depression/sadness", "sleepiness", "contentment"]


def band(x):
    return "low" if x < 0.35 else ("medium" if x <= 0.65 else "high")


def octant_state(k):
    theta = math.radians(45 * k)
    v = min(1.0, max(0.0, 0.5 + 0.5 * math.cos(theta)))
    a = min(1.0, max(0.0, 0.5 + 0.5 * math.sin(theta)))
    dv, da = v - 0.5, a - 0.5
    pos = dv > -1e-9
    act = da > -1e-9
    family = ("positive" if pos else "negative") + "-" + ("activated" if act else "deactivated")
    return v, a, family, band(a)


RANGE_WORDS = {
    "a": {
        "pleasure": "pleasure, warmth, gentle happiness",
        "excitement": "elation, enthusiasm, a highly positive and excited state",
        "arousal/alert": "alertness, eager anticipation",
        "distress": "distress, anxiety, tension",
        "misery": "misery, frustration, discontent",
        "depression/sadness": "sadness or melancholy, low intensity",
        "sleepiness": "sleepiness, drowsy calm",
        "contentment": "contentment, serenity, relaxation",
    },
    "b": {
        "pleasure": "pleasant warmth with steady energy",
        "excitement": "joy, elation, intense positive excitement",
        "arousal/alert": "heightened attention, readiness",
        "distress": "agitation, alarm, strain",
        "misery": "unhappiness, bitterness",
        "depression/sadness": "melancholy with subdued energy, a quiet introspective state",
        "sleepiness": "drowsiness, heavy-lidded stillness",
        "contentment": "peaceful satisfaction",
    },
}

# Backend "b" adds one further ontological or structural type per octant.
EXTRA_B = {
    "pleasure": ("Ontological_Personification", "playful light creatures", "darting gently between viewers",
                 "pleasure personified as friendly, playful creatures"),
    "excitement": ("Ontological_Container", "overflowing luminescence spilling past the edges", "spilling outward",
                   "happiness as a container that cannot hold its contents"),
    "arousal/alert": ("Structural", "light pulses that follow a metronome-like rhythm", "pulsing in tight regular beats",
                      "alertness structured like a ticking count-in before a performance"),
    "distress": ("Ontological_Personification", "jittery moth-like shapes", "fluttering erratically",
                 "distress creaturefied as anxious, fluttering moths"),
    "misery": ("Ontological_Metonymy", "empty, slumped chairs", "motionless",
               "unoccupied seats stand for the absent joy of the crowd"),
    "depression/sadness": ("Ontological_Container", "a contained pool of dim light", "barely rippling",
                           "melancholy as a contained emotion that permeates without spreading"),
    "sleepiness": ("Ontological_Personification", "slow-breathing drifting shapes", "swelling and shrinking slowly",
                   "drowsiness personified as slow, breathing forms"),
    "contentment": ("Ontological_Container", "softly glowing lantern bubbles", "floating and gently bobbing",
                    "contentment as warmth held safely inside a bubble"),
}


def wrap(prose, obj):
    return f"{prose}\n\n```json\n{json.dumps(obj, indent=2, ensure_ascii=False)}\n```"


def fixture_entry(style, step, k, scene):
    octant = OCTANTS[k]
    v, a, family, intensity = octant_state(k)
    rule = rule_entry(family, intensity, scene)
    s = SCENES[scene]
    rng = RANGE_WORDS[style][octant]
    types = [dict(t) for t in rule["metaphor_types"]]
    cues = [dict(c) for c in rule["visual_cues"]]
    mapping = [dict(m) for m in rule["mapping"]]
    elements = list(rule["metaphorical_elements"])
    modifiers = list(rule["detailed_modifiers"])
    main_scene = rule["main_scene"]
    if style == "b":
        ty, desc, dyn, why = EXTRA_B[octant]
        types.append({"type": ty, "rationale": why})
        cues.append({"description": desc, "dynamics": dyn, "mapped_dimension": "both"})
        mapping.append({"state_aspect": f"overall {rng.split(',')[0]}", "cue_index": len(cues) - 1})
        elements.append(f"{desc}, {dyn}")

    # Concert-scene entries for the two demonstration pairs.
    if scene == "concert" and octant == "excitement":
        if style == "a":
            types = [
                {"type": "Ontological_EntitySubstance", "rationale": "enthusiasm as shimmering, sparkling lights"},
                {"type": "Orientational", "rationale": "upward motion mirrors the high energy and uplift of elation"},
            ]
            cues = [
                {"description": "subtle star-like sparkles among the audience", "dynamics": "shimmering", "mapped_dimension": "valence"},
                {"description": "softly rising wisps of light", "dynamics": "rising gently upward", "mapped_dimension": "arousal"},
            ]
        else:
            types = [
                {"type": "Ontological_EntitySubstance", "rationale": "joy as radiant light and energy as sparkling particles"},
                {"type": "Ontological_Container", "rationale": "happiness overflowing its boundaries emphasizes intensity"},
                {"type": "Orientational", "rationale": "upward, spiraling movement mirrors heightened arousal"},
            ]
            cues = [
                {"description": "radiant light and sparkling particles", "dynamics": "floating like prismatic orbs", "mapped_dimension": "valence"},
                {"description": "overflowing luminescence", "dynamics": "spilling beyond the stage edges", "mapped_dimension": "both"},
                {"description": "upward-spiraling glitter from stage vents", "dynamics": "spiraling upward", "mapped_dimension": "arousal"},
            ]
        mapping = [{"state_aspect": "elation", "cue_index": 0}] + [
            {"state_aspect": "high arousal", "cue_index": i} for i in range(1, len(cues))]
        main_scene = "Concert stage alive with dynamic lighting"
        elements = ["subtle star-like sparkles among the audience", "softly rising wisps of light"]
        modifiers = ["vibrant colors", "high energy yet harmonious atmosphere"]
    if scene == "concert" and octant == "depression/sadness":
        if style == "a":
            types = [
                {"type": "Ontological_EntitySubstance", "rationale": "sadness as a faint, fleeting substance"},
                {"type": "Orientational", "rationale": "a low position suggests a downward, introspective gaze"},
            ]
            cues = [
                {"description": "a faint, lingering blue mist", "dynamics": "gently swaying", "mapped_dimension": "valence"},
                {"description": "mist positioned slightly below eye level", "dynamics": "settling downward", "mapped_dimension": "arousal"},
            ]
            main_scene = "A concert stage with a subtle blue mist gathering at its base"
            elements = ["a faint blue mist gently swaying to the music", "mist positioned below eye level"]
            modifiers = ["soft muted lighting", "hazy blue tone", "contrasting emotional atmospheres"]
        else:
            types = [
                {"type": "Ontological_Container", "rationale": "melancholy as a contained, lingering presence that permeates quietly"},
                {"type": "Orientational", "rationale": "melancholy as downward and dissipating: sinking and fading"},
                {"type": "Ontological_EntitySubstance", "rationale": "melancholy as a slow, diffuse substance like mist or ash"},
            ]
            cues = [
                {"description": "a translucent mist creeping across the floor", "dynamics": "creeping slowly", "mapped_dimension": "valence"},
                {"description": "glowing embers drifting downward from the lighting rig", "dynamics": "drifting downward and dissolving", "mapped_dimension": "arousal"},
                {"description": "a slow haze of fine ash", "dynamics": "settling", "mapped_dimension": "both"},
            ]
            main_scene = "A concert stage at night bathed in cool blue spotlights"
            elements = ["a translucent mist creeping across the floor",
                        "glowing embers drifting downward into the mist"]
            modifiers = ["cool blue spotlights", "delicate golden trails", "quiet, introspective mood"]
        mapping = [{"state_aspect": "melancholy", "cue_index": 0}] + [
            {"state_aspect": "subdued energy", "cue_index": i} for i in range(1, len(cues))]

    cue_names = " and ".join(c["description"] for c in cues[:2])
    nonintrusion = (f"The {cue_names} stay {s['placement']}, so they do not affect the main activity: "
                    f"{s['primary_activity']}.")
    if step == 1:
        obj = {"emotional_range": rng, "emotional_intensity": intensity, "family": family}
        prose = (f"The pair ({v:.3f}, {a:.3f}) sits in the {octant} region of the circumplex; "
                 f"valence is {band(v)} and arousal is {intensity}.")
    elif step == 2:
        obj = {"metaphor_types": types, "visual_cues": cues, "mapping": mapping}
        prose = "I combine " + ", ".join(t["type"] for t in types) + " metaphors for this scene."
    elif step == 3:
        obj = {
            "overall_description": f"{main_scene}, with {cues[0]['description']} {s['placement']}",
            "emotional_atmosphere": rng,
            "details": [f"{c['description']} ({c.get('dynamics') or 'static'})" for c in cues],
            "nonintrusion_statement": nonintrusion,
        }
        prose = f"The cues are placed so the {scene} keeps its focus."
    else:
        obj = {"main_scene": main_scene, "metaphorical_elements": elements, "detailed_modifiers": modifiers}
        prose = "Three-layer prompt:"
    return wrap(prose, obj)


def gen_fixture(style):
    out = {}
    for step in (1, 2, 3, 4):
        for k in range(8):
            for scene in ("gallery", "sports", "concert"):
                out[f"step{step}|{OCTANTS[k]}|{scene}"] = fixture_entry(style, step, k, scene)
    return out


def main():
    with open(os.path.join(ROOT, "rules.json"), "w") as f:
        json.dump(gen_rules(), f, indent=2, ensure_ascii=False)
        f.write("\n")
    os.makedirs(os.path.join(ROOT, "fixtures"), exist_ok=True)
    for style in ("a", "b"):
        with open(os.path.join(ROOT, "fixtures", f"scripted_{style}.json"), "w") as f:
            json.dump(gen_fixture(style), f, indent=2, ensure_ascii=False)
            f.write("\n")


if __name__ == "__main__":
    main()
