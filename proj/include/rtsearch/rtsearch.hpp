#pragma once

#include "rtsearch/bridge_client.hpp"
#include "rtsearch/bridge_environment.hpp"
#include "rtsearch/codebook.hpp"
#include "rtsearch/config.hpp"
#include "rtsearch/embedding.hpp"
#include "rtsearch/error.hpp"
#include "rtsearch/harness.hpp"
#include "rtsearch/random.hpp"
#include "rtsearch/search.hpp"
#include "rtsearch/text.hpp"
#include "rtsearch/victim.hpp"
