#pragma once

#include "gem/metrics.hpp"
#include "gem/model.hpp"
#include "gem/quant.hpp"
#include "gem/router.hpp"

#include <json.hpp>

#include <filesystem>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace gem {

using Json = nlohmann::ordered_json;

/// Strict reader over one JSON object: unknown keys and type errors throw
/// std::invalid_argument naming the dotted field path.
class JsonReader {
public:
    JsonReader(const Json& object, std::string path);

    template <typename T>
    void read(const char* key, T& out);

    const Json* child(const char* key);
    std::string field(const char* key) const;
    /// Throws on any key not consumed by read()/child().
    void finish() const;

private:
    const Json& object_;
    std::string path_;
    std::vector<std::string> seen_;
};

template <typename T>
void JsonReader::read(const char* key, T& out) {
    seen_.emplace_back(key);
    const auto it = object_.find(key);
    if (it == object_.end()) return;
    try {
        if constexpr (std::is_same_v<T, bool>) {
            if (!it->is_boolean()) throw std::invalid_argument("expected boolean");
        } else if constexpr (std::is_integral_v<T>) {
            if (!it->is_number_integer()) throw std::invalid_argument("expected integer");
            if constexpr (std::is_unsigned_v<T>) {
                if (it->is_number_integer() && !it->is_number_unsigned() && it->template get<long long>() < 0)
                    throw std::invalid_argument("expected non-negative integer");
            }
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!it->is_number()) throw std::invalid_argument("expected number");
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!it->is_string()) throw std::invalid_argument("expected string");
        }
        out = it->template get<T>();
    } catch (const std::exception& e) {
        throw std::invalid_argument(field(key) + ": " + e.what());
    }
}

namespace quant {
void to_json(Json& j, const PrecisionMap& pm);
void from_json_at(const Json& j, PrecisionMap& pm, const std::string& path);
}  // namespace quant

namespace router {
void to_json(Json& j, const RouterConfig& c);
void from_json_at(const Json& j, RouterConfig& c, const std::string& path);
}  // namespace router

namespace model {
void to_json(Json& j, const GemConfig& c);
void from_json_at(const Json& j, GemConfig& c, const std::string& path);
void to_json(Json& j, const TrainConfig& c);
void from_json_at(const Json& j, TrainConfig& c, const std::string& path);
void to_json(Json& j, const TaskSpec& t);
void from_json_at(const Json& j, TaskSpec& t, const std::string& path);

/// Self-describing checkpoint: format tag, embedded GemConfig and seed, and
/// every tensor by name with its shape.
Json checkpoint_to_json(const GemModel& model);
GemModel checkpoint_from_json(const Json& j);
void save_checkpoint(const GemModel& model, const std::filesystem::path& path);
GemModel load_checkpoint(const std::filesystem::path& path);
}  // namespace model

namespace metrics {
void to_json(Json& j, const MetricRecord& r);
void from_json_at(const Json& j, MetricRecord& r, const std::string& path);
void to_json(Json& j, const PlatformProfile& p);
void from_json_at(const Json& j, PlatformProfile& p, const std::string& path);
void to_json(Json& j, const CostReport& c);
void to_json(Json& j, const MetricRow& r);
}  // namespace metrics

}  // namespace gem
