#include "rcod/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace rcod {

namespace {

// Consumes whitespace and '#' comments, tracking the byte offset for error
// reporting.
void skip_separators(const std::string& buf, size_t& pos) {
    while (pos < buf.size()) {
        const char ch = buf[pos];
        if (ch == '#') {
            while (pos < buf.size() && buf[pos] != '\n') ++pos;
        } else if (ch == ' ' || ch == '\t' || ch == '\r' || ch == '\n') {
            ++pos;
        } else {
            break;
        }
    }
}

int parse_int(const std::string& buf, size_t& pos, const std::string& path, const char* what) {
    skip_separators(buf, pos);
    size_t start = pos;
    while (pos < buf.size() && buf[pos] >= '0' && buf[pos] <= '9') ++pos;
    if (pos == start)
        throw ParseError(path + ": expected " + std::string(what) + " at byte offset " +
                         std::to_string(start));
    try {
        return std::stoi(buf.substr(start, pos - start));
    } catch (const std::exception&) {
        throw ParseError(path + ": " + std::string(what) + " out of range at byte offset " +
                         std::to_string(start));
    }
}

}  // namespace

Image load_image(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string buf = ss.str();

    if (buf.size() < 2 || buf[0] != 'P' || (buf[1] != '5' && buf[1] != '6'))
        throw ParseError(path + ": bad magic at byte offset 0 (want P5 or P6)");
    const int channels = buf[1] == '5' ? 1 : 3;
    size_t pos = 2;
    const int w = parse_int(buf, pos, path, "width");
    const int h = parse_int(buf, pos, path, "height");
    const int maxval = parse_int(buf, pos, path, "maxval");
    if (w <= 0 || h <= 0)
        throw ParseError(path + ": non-positive dimensions at byte offset " + std::to_string(pos));
    if (maxval != 255)
        throw ParseError(path + ": unsupported maxval " + std::to_string(maxval) +
                         " at byte offset " + std::to_string(pos) + " (want 255)");
    if (pos >= buf.size() ||
        (buf[pos] != '\n' && buf[pos] != ' ' && buf[pos] != '\t' && buf[pos] != '\r'))
        throw ParseError(path + ": missing separator after header at byte offset " +
                         std::to_string(pos));
    ++pos;

    const size_t want = size_t(w) * h * channels;
    const size_t have = buf.size() - pos;
    if (have < want)
        throw ParseError(path + ": truncated payload, expected " + std::to_string(want) +
                         " bytes but found " + std::to_string(have) + " (payload starts at byte " +
                         std::to_string(pos) + ")");

    Image img(h, w, channels);
    for (size_t i = 0; i < want; ++i) img.data[i] = float(uint8_t(buf[pos + i])) / 255.f;
    return img;
}

void save_image(const Image& img, const std::string& path) {
    if (img.c != 1 && img.c != 3) throw IoError("save_image: only 1 or 3 channels supported");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open image file for writing: " + path);
    out << (img.c == 1 ? "P5" : "P6") << "\n" << img.w << " " << img.h << "\n255\n";
    std::vector<uint8_t> bytes(img.data.size());
    for (size_t i = 0; i < img.data.size(); ++i) {
        const float v = std::min(1.f, std::max(0.f, img.data[i]));
        bytes[i] = uint8_t(std::lround(v * 255.f));
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out) throw IoError("short write to " + path);
}

Image clip01(Image img) {
    for (auto& v : img.data) v = std::min(1.f, std::max(0.f, v));
    return img;
}

}  // namespace rcod
