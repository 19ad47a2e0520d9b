import logging
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple, Union

from sceneintent.exceptions import MissingInstanceError
from trajectories.windows import TrainInstance
from trajectories.worlds import World

from .camera import CameraModel, CameraMount, camera_for_pose, read_camera, write_camera
from .segmentation import SegMap, read_segmap, render_synthetic_segmap, write_segmap

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
Scene = Tuple[SegMap, CameraModel]

SCENE_DIR = 'scenes'


def scene_paths(directory: PathLike, scene_id: str) -> Tuple[Path, Path]:
    base = Path(directory, SCENE_DIR)
    return base / f'{scene_id}.segmap', base / f'{scene_id}.camera.json'


def render_scene(
    instance: TrainInstance,
    world: World,
    mount: Optional[CameraMount] = None,
    label_noise: Optional[float] = None,
) -> Scene:
    """
    Camera at the instance's agent pose and the segmentation it would see.
    """
    cam = camera_for_pose(instance.agent_pose, mount)
    return render_synthetic_segmap(world, cam, label_noise), cam


def write_scene(directory: PathLike, scene_id: str, scene: Scene) -> None:
    seg_path, camera_path = scene_paths(directory, scene_id)
    seg_path.parent.mkdir(parents=True, exist_ok=True)
    write_segmap(seg_path, scene[0])
    write_camera(camera_path, scene[1])


class SceneCatalog:
    """
    Resolves an instance's scene: stored files when the dataset has them,
    otherwise a deterministic rendering from the instance's world.
    """

    def __init__(
        self,
        worlds: Mapping[str, World],
        directory: Optional[PathLike] = None,
        mount: Optional[CameraMount] = None,
        label_noise: Optional[float] = None,
    ):
        self.worlds = dict(worlds)
        self.directory = Path(directory) if directory is not None else None
        self.mount = mount or CameraMount.from_settings()
        self.label_noise = label_noise
        self._cache: Dict[str, Scene] = {}

    def get(self, instance: TrainInstance) -> Scene:
        if instance.scene_id in self._cache:
            return self._cache[instance.scene_id]
        scene = self._load(instance.scene_id)
        if scene is None:
            world = self.worlds.get(instance.world_id)
            if world is None:
                raise MissingInstanceError(
                    f'No scene files and no world {instance.world_id!r} for scene {instance.scene_id}.'
                )
            scene = render_scene(instance, world, self.mount, self.label_noise)
        self._cache[instance.scene_id] = scene
        return scene

    def _load(self, scene_id: str) -> Optional[Scene]:
        if self.directory is None:
            return None
        seg_path, camera_path = scene_paths(self.directory, scene_id)
        if not (seg_path.exists() and camera_path.exists()):
            return None
        logger.debug(f"Loading scene {scene_id} from {seg_path.parent}")
        return read_segmap(seg_path), read_camera(camera_path)
