from rest_framework import serializers


class SceneConfigSerializer(serializers.Serializer):
    class_names = serializers.ListField(child=serializers.CharField(), min_length=1)
    traversable_classes = serializers.ListField(child=serializers.CharField())
    label_noise = serializers.FloatField(min_value=0.0, max_value=0.99)
    footprint_radius = serializers.FloatField(min_value=0.001)

    def validate(self, attrs):
        if len(set(attrs['class_names'])) != len(attrs['class_names']):
            raise serializers.ValidationError({'class_names': 'Class names must be unique.'})
        unknown = sorted(set(attrs['traversable_classes']) - set(attrs['class_names']))
        if unknown:
            raise serializers.ValidationError(
                {'traversable_classes': f'Unknown classes {unknown}.'}
            )
        return attrs


class CameraMountSerializer(serializers.Serializer):
    height = serializers.FloatField(min_value=0.01)
    pitch = serializers.FloatField(min_value=-1.5, max_value=1.5)
    forward_offset = serializers.FloatField()
    width = serializers.IntegerField(min_value=1)
    height_px = serializers.IntegerField(min_value=1)
    focal = serializers.FloatField(min_value=0.01)
