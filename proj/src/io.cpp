#include "vithd/io.hpp"

#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include <openssl/evp.h>
#include <png.h>

#include "vithd/error.hpp"

namespace vithd {

nlohmann::json Provenance::to_json() const
{
    return {{"configDigest", config_digest}, {"codeVersion", code_version}, {"masterSeed", master_seed}};
}

Provenance Provenance::from_json(const nlohmann::json& j)
{
    Provenance p;
    p.config_digest = j.at("configDigest").get<std::string>();
    p.code_version = j.at("codeVersion").get<std::string>();
    p.master_seed = j.at("masterSeed").get<std::uint64_t>();
    return p;
}

std::string sha256_hex(std::string_view data)
{
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw Error("sha256 failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

std::string read_text_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError(path.string(), "cannot open file");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string sha256_file(const std::filesystem::path& path)
{
    return sha256_hex(read_text_file(path));
}

void OutputPolicy::prepare(const std::filesystem::path& path) const
{
    std::error_code ec;
    if (!overwrite_ && std::filesystem::exists(path, ec))
        throw IoError(path.string(), "refusing to overwrite existing output (pass --force)");
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path(), ec);
        if (ec)
            throw IoError(path.parent_path().string(), "cannot create directory");
    }
}

void write_text_file(const std::filesystem::path& path, std::string_view text, const OutputPolicy& policy)
{
    policy.prepare(path);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError(path.string(), "cannot open for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out)
        throw IoError(path.string(), "write failed");
}

std::string to_jsonl(const std::vector<nlohmann::json>& records)
{
    std::string out;
    for (const auto& r : records) {
        out += r.dump();
        out.push_back('\n');
    }
    return out;
}

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError(path.string(), "cannot open file");
    std::vector<nlohmann::json> records;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        try {
            records.push_back(nlohmann::json::parse(line));
        } catch (const nlohmann::json::parse_error& e) {
            throw IoError(path.string() + ":" + std::to_string(line_no), std::string("malformed record: ") + e.what());
        }
    }
    return records;
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const noexcept { std::fclose(f); }
};

void write_png_rows(const std::filesystem::path& path, int width, int height, int color_type, int channels,
                    const std::uint8_t* data, const Provenance& prov, const OutputPolicy& policy)
{
    policy.prepare(path);
    std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
    if (!fp)
        throw IoError(path.string(), "cannot open for writing");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError(path.string(), "libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError(path.string(), "PNG encode failed");
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, color_type,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);

    const std::string seed = std::to_string(prov.master_seed);
    png_text text[3] = {};
    const char* keys[] = {"vithd:configDigest", "vithd:codeVersion", "vithd:masterSeed"};
    const std::string* values[] = {&prov.config_digest, &prov.code_version, &seed};
    for (int i = 0; i < 3; ++i) {
        text[i].compression = PNG_TEXT_COMPRESSION_NONE;
        text[i].key = const_cast<char*>(keys[i]);
        text[i].text = const_cast<char*>(values[i]->c_str());
    }
    png_set_text(png, info, text, 3);
    png_write_info(png, info);
    const std::size_t stride = static_cast<std::size_t>(width) * channels;
    for (int y = 0; y < height; ++y)
        png_write_row(png, const_cast<png_bytep>(data + y * stride));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

std::vector<std::uint8_t> read_png_as(const std::filesystem::path& path, png_uint_32 format, int& width, int& height)
{
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str()))
        throw IoError(path.string(), std::string("cannot read PNG (") + image.message + ")");
    image.format = format;
    std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
        std::string msg = image.message;
        png_image_free(&image);
        throw IoError(path.string(), "cannot decode PNG (" + msg + ")");
    }
    width = static_cast<int>(image.width);
    height = static_cast<int>(image.height);
    return buffer;
}

} // namespace

void write_png(const std::filesystem::path& path, const RgbImage& image, const Provenance& prov,
               const OutputPolicy& policy)
{
    write_png_rows(path, image.width, image.height, PNG_COLOR_TYPE_RGB, 3, image.pixels.data(), prov, policy);
}

void write_mask_png(const std::filesystem::path& path, const BinaryMask& mask, const Provenance& prov,
                    const OutputPolicy& policy)
{
    std::vector<std::uint8_t> gray(mask.size());
    auto bits = mask.bits();
    for (std::size_t i = 0; i < gray.size(); ++i)
        gray[i] = bits[i] ? 255 : 0;
    write_png_rows(path, mask.width(), mask.height(), PNG_COLOR_TYPE_GRAY, 1, gray.data(), prov, policy);
}

RgbImage read_png(const std::filesystem::path& path)
{
    RgbImage img;
    img.pixels = read_png_as(path, PNG_FORMAT_RGB, img.width, img.height);
    return img;
}

BinaryMask read_mask_png(const std::filesystem::path& path)
{
    int w = 0, h = 0;
    auto gray = read_png_as(path, PNG_FORMAT_GRAY, w, h);
    return BinaryMask(w, h, std::move(gray));
}

} // namespace vithd
