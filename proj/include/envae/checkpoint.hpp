#pragma once

#include <filesystem>
#include <string>

#include "envae/model.hpp"

namespace envae {

// Text checkpoint. Whitespace-separated tokens, one record per line:
//
//   envae-checkpoint 1
//   features <D>  groups <m>  latent_dim <L>  ...scalar fields...
//   assignment <D group indices>
//   mlp <role> <index> <layer count>
//   layer <in> <out> <relu|linear> <dropout> <batch_norm 0|1>
//   weight <out*in values>   bias <out values>
//   bn <momentum> <eps> gamma <...> beta <...> running_mean <...> running_var <...>
//   end
//
// Every double is written in C99 hex-float notation ("%a"), so a load after
// a save reproduces the model bit for bit.
std::string checkpoint_to_string(const EnVaeModel& model);
EnVaeModel checkpoint_from_string(const std::string& text);

void save_checkpoint(const EnVaeModel& model, const std::filesystem::path& path);
EnVaeModel load_checkpoint(const std::filesystem::path& path);

}  // namespace envae
