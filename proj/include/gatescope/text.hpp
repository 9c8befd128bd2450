#pragma once

#include <cctype>
#include <cstdint>
#include <string>
#include <string_view>

namespace gatescope {

namespace detail {

// Decodes one UTF-8 code point at i, advancing i. Malformed bytes decode as
// themselves so normalization never throws on dirty gateway output.
inline std::uint32_t utf8_next(std::string_view s, std::size_t& i) {
    const unsigned char b0 = static_cast<unsigned char>(s[i]);
    if (b0 < 0x80) { ++i; return b0; }
    auto cont = [&](std::size_t k) {
        return i + k < s.size() &&
               (static_cast<unsigned char>(s[i + k]) & 0xc0) == 0x80;
    };
    if ((b0 & 0xe0) == 0xc0 && cont(1)) {
        std::uint32_t cp = (b0 & 0x1fu) << 6 |
                           (static_cast<unsigned char>(s[i + 1]) & 0x3fu);
        i += 2;
        return cp;
    }
    if ((b0 & 0xf0) == 0xe0 && cont(1) && cont(2)) {
        std::uint32_t cp = (b0 & 0x0fu) << 12 |
                           (static_cast<unsigned char>(s[i + 1]) & 0x3fu) << 6 |
                           (static_cast<unsigned char>(s[i + 2]) & 0x3fu);
        i += 3;
        return cp;
    }
    if ((b0 & 0xf8) == 0xf0 && cont(1) && cont(2) && cont(3)) {
        std::uint32_t cp = (b0 & 0x07u) << 18 |
                           (static_cast<unsigned char>(s[i + 1]) & 0x3fu) << 12 |
                           (static_cast<unsigned char>(s[i + 2]) & 0x3fu) << 6 |
                           (static_cast<unsigned char>(s[i + 3]) & 0x3fu);
        i += 4;
        return cp;
    }
    ++i;
    return b0;
}

// Folds Latin-1 Supplement and Latin Extended-A letters to unaccented ASCII.
// Returns nullptr when the code point has no fold.
inline const char* fold_diacritic(std::uint32_t cp) {
    switch (cp) {
        case 0xC0: case 0xC1: case 0xC2: case 0xC3: case 0xC4: case 0xC5:
        case 0xE0: case 0xE1: case 0xE2: case 0xE3: case 0xE4: case 0xE5:
        case 0x100: case 0x101: case 0x102: case 0x103: case 0x104: case 0x105:
            return "a";
        case 0xC6: case 0xE6: return "ae";
        case 0xC7: case 0xE7:
        case 0x106: case 0x107: case 0x108: case 0x109: case 0x10A:
        case 0x10B: case 0x10C: case 0x10D:
            return "c";
        case 0x10E: case 0x10F: case 0x110: case 0x111: case 0xD0: case 0xF0:
            return "d";
        case 0xC8: case 0xC9: case 0xCA: case 0xCB:
        case 0xE8: case 0xE9: case 0xEA: case 0xEB:
        case 0x112: case 0x113: case 0x114: case 0x115: case 0x116:
        case 0x117: case 0x118: case 0x119: case 0x11A: case 0x11B:
            return "e";
        case 0x11C: case 0x11D: case 0x11E: case 0x11F: case 0x120:
        case 0x121: case 0x122: case 0x123:
            return "g";
        case 0x124: case 0x125: case 0x126: case 0x127: return "h";
        case 0xCC: case 0xCD: case 0xCE: case 0xCF:
        case 0xEC: case 0xED: case 0xEE: case 0xEF:
        case 0x128: case 0x129: case 0x12A: case 0x12B: case 0x12C:
        case 0x12D: case 0x12E: case 0x12F: case 0x130: case 0x131:
            return "i";
        case 0x134: case 0x135: return "j";
        case 0x136: case 0x137: return "k";
        case 0x139: case 0x13A: case 0x13B: case 0x13C: case 0x13D:
        case 0x13E: case 0x13F: case 0x140: case 0x141: case 0x142:
            return "l";
        case 0xD1: case 0xF1:
        case 0x143: case 0x144: case 0x145: case 0x146: case 0x147: case 0x148:
            return "n";
        case 0xD2: case 0xD3: case 0xD4: case 0xD5: case 0xD6: case 0xD8:
        case 0xF2: case 0xF3: case 0xF4: case 0xF5: case 0xF6: case 0xF8:
        case 0x14C: case 0x14D: case 0x14E: case 0x14F: case 0x150: case 0x151:
            return "o";
        case 0x152: case 0x153: return "oe";
        case 0x154: case 0x155: case 0x156: case 0x157: case 0x158: case 0x159:
            return "r";
        case 0x15A: case 0x15B: case 0x15C: case 0x15D: case 0x15E:
        case 0x15F: case 0x160: case 0x161:
            return "s";
        case 0xDF: return "ss";
        case 0x162: case 0x163: case 0x164: case 0x165: case 0x166: case 0x167:
            return "t";
        case 0xD9: case 0xDA: case 0xDB: case 0xDC:
        case 0xF9: case 0xFA: case 0xFB: case 0xFC:
        case 0x168: case 0x169: case 0x16A: case 0x16B: case 0x16C:
        case 0x16D: case 0x16E: case 0x16F: case 0x170: case 0x171:
        case 0x172: case 0x173:
            return "u";
        case 0x174: case 0x175: return "w";
        case 0xDD: case 0xFD: case 0xFF: case 0x176: case 0x177: case 0x178:
            return "y";
        case 0x179: case 0x17A: case 0x17B: case 0x17C: case 0x17D: case 0x17E:
            return "z";
        default: return nullptr;
    }
}

}  // namespace detail

// Canonical form used by every textual match in the framework: lowercase,
// diacritics folded, punctuation and unrecognized symbols mapped to spaces,
// whitespace runs collapsed, ends trimmed.
inline std::string normalize_text(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    auto push = [&out](char c) {
        if (c == ' ') {
            if (out.empty() || out.back() == ' ') return;
            out.push_back(' ');
        } else {
            out.push_back(c);
        }
    };
    std::size_t i = 0;
    while (i < s.size()) {
        const std::uint32_t cp = detail::utf8_next(s, i);
        if (cp < 0x80) {
            const char c = static_cast<char>(cp);
            if (std::isalnum(static_cast<unsigned char>(c))) {
                push(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
            } else {
                push(' ');
            }
            continue;
        }
        if (const char* folded = detail::fold_diacritic(cp)) {
            for (const char* p = folded; *p; ++p) push(*p);
        } else {
            push(' ');
        }
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
}

// Substring test on normalized forms. Empty needles never match.
inline bool contains_normalized(std::string_view haystack, std::string_view needle) {
    const std::string h = normalize_text(haystack);
    const std::string n = normalize_text(needle);
    if (n.empty()) return false;
    return h.find(n) != std::string::npos;
}

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

}  // namespace gatescope
