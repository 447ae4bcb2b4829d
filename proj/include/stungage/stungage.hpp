#pragma once

#include "stungage/config.hpp"
#include "stungage/error.hpp"
#include "stungage/eval.hpp"
#include "stungage/fixation.hpp"
#include "stungage/foreground.hpp"
#include "stungage/gaze.hpp"
#include "stungage/image.hpp"
#include "stungage/ingest.hpp"
#include "stungage/live.hpp"
#include "stungage/offline.hpp"
#include "stungage/pipeline.hpp"
#include "stungage/pose.hpp"
#include "stungage/presence.hpp"
#include "stungage/records.hpp"
#include "stungage/scoring.hpp"
#include "stungage/segmentation.hpp"
#include "stungage/stats.hpp"
#include "stungage/feed.hpp"
