// HTTP client for an optional chat-completions text generator. Kept in its own
// translation unit because the HTTP header is large.
#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <cstdlib>
#include <sstream>

#include "vithd/bench.hpp"

namespace vithd {

std::optional<LlmClientOptions> LlmClientOptions::from_environment()
{
    const char* endpoint = std::getenv("VITHD_LLM_ENDPOINT");
    if (!endpoint || !*endpoint)
        return std::nullopt;
    LlmClientOptions o;
    o.endpoint = endpoint;
    if (const char* key = std::getenv("VITHD_LLM_KEY"))
        o.api_key = key;
    if (const char* model = std::getenv("VITHD_LLM_MODEL"); model && *model)
        o.model = model;
    if (const char* timeout = std::getenv("VITHD_LLM_TIMEOUT"); timeout && *timeout) {
        char* end = nullptr;
        const double t = std::strtod(timeout, &end);
        if (end == timeout || *end != '\0' || !(t > 0.0))
            throw ConfigError(std::string("VITHD_LLM_TIMEOUT must be a positive number of seconds, got '") + timeout + "'");
        o.timeout_seconds = t;
    }
    return o;
}

namespace {

struct SplitUrl {
    std::string origin; // scheme://host[:port]
    std::string path;
};

SplitUrl split_url(const std::string& url)
{
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos)
        throw ConfigError("LLM endpoint must be an absolute http(s) URL: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos)
        return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

std::string instruction(const MetaAttributes& a)
{
    std::ostringstream os;
    os << "Write one vivid text-to-image prompt (a single sentence) depicting " << a.human_count << " "
       << a.age_group << " " << a.gender << (a.human_count > 1 ? "s" : "") << ", " << a.activity << ", in "
       << a.artistic_style << " style";
    if (a.setting)
        os << ", " << *a.setting;
    os << ". Mention every one of these words literally. Reply with the prompt only.";
    return os.str();
}

} // namespace

std::string LlmGenerator::generate(const MetaAttributes& attrs, const PromptCatalog&, std::uint64_t seed)
{
    const auto url = split_url(options_.endpoint);
    httplib::Client client(url.origin);
    const auto secs = static_cast<time_t>(options_.timeout_seconds);
    const auto usecs = static_cast<time_t>((options_.timeout_seconds - static_cast<double>(secs)) * 1e6);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);

    httplib::Headers headers;
    if (!options_.api_key.empty())
        headers.emplace("Authorization", "Bearer " + options_.api_key);
    const nlohmann::json body{{"model", options_.model},
                              {"seed", seed & 0x7fffffffffffffffULL},
                              {"temperature", 0.7},
                              {"messages", {{{"role", "user"}, {"content", instruction(attrs)}}}}};
    const std::string payload = body.dump();

    std::string last_error;
    for (int attempt = 1; attempt <= options_.max_attempts; ++attempt) {
        auto res = client.Post(url.path, headers, payload, "application/json");
        if (!res) {
            last_error = "request failed: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status != 200) {
            last_error = "HTTP status " + std::to_string(res->status);
            continue;
        }
        try {
            const auto j = nlohmann::json::parse(res->body);
            std::string text = j.at("choices").at(0).at("message").at("content").get<std::string>();
            if (text.find_first_not_of(" \t\r\n") == std::string::npos)
                throw GeneratorError("LLM generator returned empty text", attempt);
            return text;
        } catch (const nlohmann::json::exception& e) {
            last_error = std::string("malformed response: ") + e.what();
        }
    }
    throw GeneratorError("LLM generator failed after " + std::to_string(options_.max_attempts) +
                             " attempts: " + last_error,
                         options_.max_attempts);
}

} // namespace vithd
